//! End-to-end run against a scripted mock provider, then offline rescoring
//! and the summary CSV. No network access.
//!
//! cargo run --example mock_run [DATASET_ROOT]

#[path = "support/mod.rs"]
mod support;

use icl_bench::parser::Synonyms;
use icl_bench::prompts::StrategyKind;
use icl_bench::provider::{mock_provider, ProviderConfig, ScriptEntry};
use icl_bench::runner::{run_experiment, score_manifest, summary_csv, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scratch = tempfile::tempdir()?;
    let root = support::dataset_from_args(scratch.path());

    let mut manifests = Vec::new();
    for kind in [StrategyKind::Naive, StrategyKind::Icl4] {
        let mut config = RunConfig::new(&root, kind, 2024, scratch.path().join(kind.as_str()));
        config.cell_size = Some(128);
        // Answer with the ground truth, except for a refusal on the first request.
        let mut script = vec![ScriptEntry::Text("I'm sorry, I cannot classify this.".into())];
        script.extend(vec![ScriptEntry::Truth; 64]);
        let fast = ProviderConfig {
            max_requests_per_minute: 6000,
            ..ProviderConfig::default()
        };
        let (provider, transport) = mock_provider(script, fast)?;

        let manifest = run_experiment(&config, &provider)?;
        println!(
            "{kind}: {} requests, {:?}, rounded {}",
            transport.records().len(),
            manifest.summary.parse_counts,
            manifest.summary.rounded
        );
        println!("  manifest {}", config.manifest_path().display());

        let strict = score_manifest(config.manifest_path(), Some(&Synonyms::empty()))?;
        println!("  rescored with class names only: {}", strict.report.rounded());
        manifests.push(manifest);
    }
    print!("\n{}", summary_csv(&manifests));
    Ok(())
}
