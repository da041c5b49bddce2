//! Few-shot evaluation of vision-language chat models on binary image
//! classification.
//!
//! The pipeline: [`dataset`] loads and samples a labelled image tree,
//! [`composer`] tiles images into captioned grid figures, [`prompts`] renders
//! one of seven prompting strategies into a chat message, [`provider`] sends
//! it to a chat-completions endpoint (or a scripted mock), [`parser`] pulls
//! labels out of the reply and [`metrics`] scores them. [`runner`] ties it
//! together and records everything in a resumable JSON-lines manifest.

pub mod composer;
pub mod dataset;
pub mod metrics;
pub mod parser;
pub mod prompts;
pub mod provider;
pub mod runner;

pub use composer::{compose_grid, default_layout, ComposedFigure, GridLayout, GridSource};
pub use dataset::{
    load_dataset, stratified_sample, validate, ClassLabel, Dataset, LabeledImage, Split, Task,
    ValidationReport,
};
pub use metrics::{confusion, report, AbstentionPolicy, ConfusionMatrix, MetricsReport};
pub use parser::{parse_labels, Prediction, PredictionStatus, Synonyms};
pub use prompts::{render_prompt, template_text, PromptPackage, Strategy, StrategyKind};
pub use provider::{mock_provider, Provider, ProviderConfig, ScriptEntry};
pub use runner::{plan_requests, run_experiment, score_manifest, RunConfig, RunManifest};
