//! Runs a strategy against a live chat-completions endpoint.
//!
//! Needs the credential variable named in the provider config (default
//! OPENAI_API_KEY). Without it the run stops before any request is sent.
//!
//! cargo run --example live_run -- DATASET_ROOT STRATEGY [PROVIDER_TOML] [LIMIT]

use icl_bench::prompts::StrategyKind;
use icl_bench::provider::{Provider, ProviderConfig};
use icl_bench::runner::{run_experiment, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [root, strategy, rest @ ..] = args.as_slice() else {
        eprintln!("usage: live_run DATASET_ROOT STRATEGY [PROVIDER_TOML] [LIMIT]");
        std::process::exit(2);
    };
    let kind: StrategyKind = strategy.parse()?;
    let provider_config = match rest.first() {
        Some(path) => ProviderConfig::from_toml_file(path)?,
        None => ProviderConfig::default(),
    };
    let mut config = RunConfig::new(root, kind, 0, format!("runs/live-{kind}"));
    config.provider = provider_config.clone();
    config.limit = rest.get(1).map(|l| l.parse()).transpose()?;

    let provider = Provider::http(provider_config)?;
    if let Err(e) = provider.check_credentials() {
        eprintln!("not running: {e}");
        std::process::exit(1);
    }
    let manifest = run_experiment(&config, &provider)?;
    println!("{}", manifest.summary.rounded);
    println!("manifest: {}", config.manifest_path().display());
    Ok(())
}
