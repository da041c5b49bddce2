use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use icl_bench::composer::{compose_grid, default_layout, GridLayout, GridSource};
use icl_bench::dataset::{load_dataset, validate};
use icl_bench::metrics::AbstentionPolicy;
use icl_bench::parser::Synonyms;
use icl_bench::prompts::StrategyKind;
use icl_bench::provider::{load_script, mock_provider, Provider, ProviderConfig};
use icl_bench::runner::{
    read_manifest, run_experiment, score_manifest, summary_csv, ParseCounts, RunConfig, RunError,
    ShotPolicy,
};

#[derive(Parser)]
#[command(name = "icl-bench", version, about = "Few-shot VLM classification benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dataset tree and print per-class counts.
    Validate { root: PathBuf },
    /// Tile images into one captioned grid figure.
    Compose {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rows: Option<u32>,
        #[arg(long)]
        cols: Option<u32>,
        #[arg(long)]
        cell: Option<u32>,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Run (or resume) an experiment.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        strategy: StrategyKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        provider_config: Option<PathBuf>,
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resample_per_request: bool,
        /// JSON-lines mock script; no network access when set.
        #[arg(long)]
        mock_script: Option<PathBuf>,
        #[arg(long)]
        reasoning: Option<String>,
        #[arg(long)]
        first_class: Option<String>,
        #[arg(long)]
        positive_class: Option<String>,
        #[arg(long)]
        exclude_abstentions: bool,
        #[arg(long)]
        cell_size: Option<u32>,
        #[arg(long)]
        concurrency: Option<usize>,
    },
    /// Re-score a manifest offline.
    Score {
        manifest: PathBuf,
        /// TOML table of `alias = "class"` pairs replacing the recorded synonyms.
        #[arg(long, conflicts_with = "no_synonyms")]
        synonyms: Option<PathBuf>,
        /// Match class names only.
        #[arg(long)]
        no_synonyms: bool,
    },
    /// Aggregate manifests into the summary CSV.
    Report {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn counts(c: &ParseCounts) -> String {
    format!(
        "parsed={} abstained={} unparseable={} ambiguous={}",
        c.parsed, c.abstained, c.unparseable, c.ambiguous
    )
}

fn dispatch(command: Command) -> Result<(), RunError> {
    match command {
        Command::Validate { root } => {
            let dataset = load_dataset(&root)?;
            for w in dataset.warnings() {
                eprintln!("warning: skipped {}: {}", w.path.display(), w.reason);
            }
            println!("{}", validate(&dataset));
        }
        Command::Compose {
            out,
            rows,
            cols,
            cell,
            files,
        } => {
            let mut layout = default_layout(files.len())?;
            if let (Some(rows), Some(cols)) = (rows, cols) {
                layout = GridLayout { rows, cols, ..layout };
            }
            if let Some(cell) = cell {
                layout.cell_width = cell;
                layout.cell_height = cell;
            }
            let sources: Vec<GridSource> = files
                .iter()
                .map(|p| GridSource::File {
                    id: p.display().to_string(),
                    path: p.clone(),
                })
                .collect();
            let figure = compose_grid(&sources, &layout)?;
            std::fs::write(&out, figure.encode_png()?).map_err(io(&out))?;
            for p in &figure.placements {
                println!(
                    "Image {}: {} at {}x{}+{}+{}",
                    p.index, p.source_id, p.cell.width, p.cell.height, p.cell.x, p.cell.y
                );
            }
        }
        Command::Run {
            dataset,
            strategy,
            seed,
            provider_config,
            shots,
            limit,
            out,
            resample_per_request,
            mock_script,
            reasoning,
            first_class,
            positive_class,
            exclude_abstentions,
            cell_size,
            concurrency,
        } => {
            let mut config = RunConfig::new(dataset, strategy, seed, out);
            if let Some(path) = provider_config {
                config.provider = ProviderConfig::from_toml_file(path)?;
            }
            config.shots_per_class = shots;
            config.limit = limit;
            config.reasoning_text = reasoning;
            config.first_class = first_class;
            config.positive_class = positive_class;
            config.cell_size = cell_size;
            config.concurrency = concurrency;
            if resample_per_request {
                config.shot_policy = ShotPolicy::ResamplePerRequest;
            }
            if exclude_abstentions {
                config.abstention_policy = AbstentionPolicy::Exclude;
            }
            let provider = match mock_script {
                Some(path) => mock_provider(load_script(path)?, config.provider.clone())?.0,
                None => Provider::http(config.provider.clone())?,
            };
            let manifest = run_experiment(&config, &provider)?;
            let m = &manifest.summary;
            println!("manifest: {}", config.manifest_path().display());
            println!("matrix:   {}", m.metrics.matrix);
            println!("parsed:   {}", counts(&m.parse_counts));
            println!("rounded:  {}", m.rounded);
            println!("accuracy: {:.4}", m.metrics.accuracy);
        }
        Command::Score {
            manifest,
            synonyms,
            no_synonyms,
        } => {
            let header = read_manifest(&manifest)?.header;
            let table = if no_synonyms {
                Some(Synonyms::empty())
            } else if let Some(path) = synonyms {
                let text = std::fs::read_to_string(&path).map_err(io(&path))?;
                let pairs: BTreeMap<String, String> = toml::from_str(&text)
                    .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
                Some(Synonyms::from_pairs(
                    &header.task,
                    pairs.iter().map(|(a, c)| (a.as_str(), c.as_str())),
                )?)
            } else {
                None
            };
            let outcome = score_manifest(&manifest, table.as_ref())?;
            println!("matrix:   {}", outcome.report.matrix);
            println!("parsed:   {}", counts(&outcome.parse_counts));
            println!("rounded:  {}", outcome.report.rounded());
            if !outcome.matches_embedded() {
                println!("embedded: {}", outcome.embedded.rounded());
                println!("embedded parsed: {}", counts(&outcome.embedded_parse_counts));
            }
        }
        Command::Report { manifests, out } => {
            let loaded = manifests
                .iter()
                .map(read_manifest)
                .collect::<Result<Vec<_>, _>>()?;
            let csv = summary_csv(&loaded);
            match out {
                Some(path) => std::fs::write(&path, csv).map_err(io(&path))?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}
