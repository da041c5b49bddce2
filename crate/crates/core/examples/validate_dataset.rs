//! Loads a dataset tree and prints the validation report.
//!
//! cargo run --example validate_dataset [DATASET_ROOT]

#[path = "support/mod.rs"]
mod support;

use icl_bench::dataset::{load_dataset, validate, Split};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scratch = tempfile::tempdir()?;
    let root = support::dataset_from_args(scratch.path());
    let dataset = load_dataset(&root)?;
    println!("task: {{{}, {}}}", dataset.task().first, dataset.task().second);
    println!("train items: {}", dataset.split_len(Split::Train));
    println!("test items:  {}", dataset.split_len(Split::Test));
    println!();
    println!("{}", validate(&dataset));
    Ok(())
}
