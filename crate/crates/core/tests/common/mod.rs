//! Shared fixtures for the integration tests.
#![allow(dead_code)]

pub mod geometry;
pub mod reference;
pub mod table;

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use icl_bench::dataset::LabeledImage;
use icl_bench::prompts::StrategyKind;
use icl_bench::provider::{ProviderConfig, ScriptEntry};
use icl_bench::runner::{plan_requests, prepare_dataset, RunConfig};

pub const TRAIN_COUNTS: [usize; 2] = [111, 70];
pub const TEST_COUNTS: [usize; 2] = [26, 20];
pub const CLASSES: [&str; 2] = ["COVID", "Normal"];

/// Writes a small PNG whose pixels depend on `seed`, so no two files match.
pub fn write_png(path: &Path, seed: u32, width: u32, height: u32) {
    let img = RgbImage::from_fn(width, height, |x, y| {
        let v = seed.wrapping_mul(2_654_435_761) ^ (x * 31 + y * 17);
        Rgb([(v & 0xff) as u8, ((v >> 8) & 0xff) as u8, ((v >> 16) & 0xff) as u8])
    });
    img.save(path).unwrap();
}

/// Builds the 181/46 chest X-ray shaped tree under `root`.
pub fn build_dataset(root: &Path) -> PathBuf {
    let mut seed = 0;
    for (split, counts) in [("train", TRAIN_COUNTS), ("test", TEST_COUNTS)] {
        for (class, n) in CLASSES.iter().zip(counts) {
            let dir = root.join(split).join(class);
            std::fs::create_dir_all(&dir).unwrap();
            for i in 0..n {
                seed += 1;
                let (w, h) = (8 + (seed % 5), 6 + (seed % 7));
                write_png(&dir.join(format!("img{i:03}.png")), seed, w, h);
            }
        }
    }
    root.to_path_buf()
}

pub fn dataset_dir() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let root = build_dataset(&dir.path().join("data"));
    (dir, root)
}

/// A provider config with no real throttling, suited to the virtual clock.
pub fn fast_provider() -> ProviderConfig {
    ProviderConfig {
        max_requests_per_minute: 6000,
        initial_backoff_ms: 10,
        ..ProviderConfig::default()
    }
}

pub fn config(root: &Path, kind: StrategyKind, seed: u64, out: &Path) -> RunConfig {
    let mut config = RunConfig::new(root, kind, seed, out);
    config.provider = fast_provider();
    // Small cells keep unoptimised composition fast.
    config.cell_size = Some(48);
    config
}

fn class_of(item: &LabeledImage) -> &str {
    item.label.name()
}

/// Script answering each query with `predict(position, item)`, where
/// `position` counts queries of the same true class in plan order.
pub fn scripted(config: &RunConfig, predict: impl Fn(usize, &LabeledImage) -> String) -> Vec<ScriptEntry> {
    let dataset = prepare_dataset(config).unwrap();
    let plans = plan_requests(config, &dataset).unwrap();
    let strategy = config.resolved_strategy().unwrap();
    let mut seen = std::collections::HashMap::<String, usize>::new();
    plans
        .iter()
        .map(|plan| {
            let first_query = strategy.example_count() + 1;
            let lines: Vec<String> = plan
                .queries
                .iter()
                .enumerate()
                .map(|(i, q)| {
                    let n = seen.entry(class_of(q).to_string()).or_default();
                    let label = predict(*n, q);
                    *n += 1;
                    if config.strategy == StrategyKind::Naive {
                        label
                    } else if config.strategy.figure_per_query() {
                        format!("Image {first_query}: {label}")
                    } else {
                        format!("Image {}: {label}", first_query + i)
                    }
                })
                .collect();
            ScriptEntry::Text(format!("{}\nThe findings support this.", lines.join("\n")))
        })
        .collect()
}

/// Predicts the true class except for the first `wrong[c]` items of class `c`.
pub fn with_errors(wrong: [usize; 2]) -> impl Fn(usize, &LabeledImage) -> String {
    move |n, item| {
        let c = CLASSES.iter().position(|c| *c == item.label.name()).unwrap();
        if n < wrong[c] {
            CLASSES[1 - c].to_string()
        } else {
            CLASSES[c].to_string()
        }
    }
}

/// Checks reproducibility and class-count invariants of `stratified_sample`
/// over `seeds`, returning the violations found.
pub fn sampling_failures(
    dataset: &icl_bench::dataset::Dataset,
    seeds: impl Iterator<Item = u64>,
) -> Vec<String> {
    use icl_bench::dataset::{stratified_sample, Split};
    use std::collections::{HashMap, HashSet};

    let task = dataset.task().clone();
    let mut failures = Vec::new();
    let mut hits: HashMap<String, usize> = HashMap::new();
    for seed in seeds {
        let k = (seed % 7 + 1) as usize;
        let a = stratified_sample(dataset, Split::Train, k, seed).unwrap();
        let b = stratified_sample(dataset, Split::Train, k, seed).unwrap();
        if a != b {
            failures.push(format!("seed {seed}: not reproducible"));
        }
        if a.len() != 2 * k {
            failures.push(format!("seed {seed}: {} items for k={k}", a.len()));
            continue;
        }
        let first = a[..k].iter().all(|i| i.label == task.first);
        let second = a[k..].iter().all(|i| i.label == task.second);
        if !first || !second {
            failures.push(format!("seed {seed}: classes out of order"));
        }
        if a.iter().any(|i| i.split != Split::Train || dataset.get(&i.id) != Some(i)) {
            failures.push(format!("seed {seed}: item outside the train split"));
        }
        if a.iter().map(|i| &i.id).collect::<HashSet<_>>().len() != a.len() {
            failures.push(format!("seed {seed}: repeated item"));
        }
        for i in &a {
            *hits.entry(i.id.clone()).or_default() += 1;
        }
    }
    let never: Vec<_> = dataset
        .split(Split::Train)
        .filter(|i| !hits.contains_key(&i.id))
        .map(|i| i.id.clone())
        .collect();
    if !never.is_empty() && failures.is_empty() && hits.values().sum::<usize>() > 10_000 {
        failures.push(format!("never drawn: {never:?}"));
    }
    failures
}
