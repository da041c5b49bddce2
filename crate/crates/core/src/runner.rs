//! End-to-end experiment orchestration.
//!
//! A run plans its requests up front, executes them (possibly in parallel)
//! and appends one JSON line per finished request to `manifest.jsonl`.
//! Records are written strictly in plan order, so a crashed run can be
//! resumed by skipping the plans already on disk. A final summary line holds
//! the per-item predictions and metrics.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::composer::{
    compose_grid, default_layout, Annotation, ComposeError, GridLayout, GridSource, Placement,
};
use crate::dataset::{
    load_dataset, stratified_sample, validate, ClassLabel, Dataset, DatasetError, LabeledImage,
    Split, Task, ValidationReport,
};
use crate::metrics::{
    confusion, report_tally, AbstentionPolicy, MetricsError, MetricsReport, RoundedRow,
};
use crate::parser::{parse_labels, Prediction, PredictionStatus, SynonymError, Synonyms};
use crate::prompts::{
    render_prompt, template_digests, RenderError, Strategy, StrategyKind, GROUP_COUNT_NOTE,
};
use crate::provider::{Provider, ProviderConfig, ProviderError};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("planning: {0}")]
    Plan(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Synonyms(#[from] SynonymError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("manifest integrity: {0}")]
    Integrity(String),
    #[error("existing manifest at {0} was produced by a different config")]
    ResumeMismatch(PathBuf),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl RunError {
    /// Short machine-readable category for CLI error lines.
    pub fn category(&self) -> &'static str {
        match self {
            RunError::Config(_) | RunError::Synonyms(_) | RunError::ResumeMismatch(_) => "config",
            RunError::Dataset(_) => "dataset",
            RunError::Plan(_) => "plan",
            RunError::Render(_) => "render",
            RunError::Compose(_) => "compose",
            RunError::Provider(ProviderError::Credential(_)) => "credential",
            RunError::Provider(_) => "provider",
            RunError::Metrics(_) => "metrics",
            RunError::Integrity(_) => "integrity",
            RunError::Io { .. } => "io",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotPolicy {
    /// One stratified draw of shots, reused by every request.
    #[default]
    FixedShots,
    /// A fresh draw per request, seeded from the run seed and plan index.
    ResamplePerRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    pub strategy: StrategyKind,
    #[serde(default)]
    pub reasoning_text: Option<String>,
    pub seed: u64,
    #[serde(default)]
    pub shots_per_class: Option<usize>,
    #[serde(default)]
    pub shot_policy: ShotPolicy,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub abstention_policy: AbstentionPolicy,
    /// Where the manifest goes. Not part of the recorded snapshot.
    #[serde(skip)]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub limit: Option<usize>,
    /// Class listed first in prompts; defaults to the lexically first.
    #[serde(default)]
    pub first_class: Option<String>,
    /// Positive class for the confusion matrix; defaults to the first class.
    #[serde(default)]
    pub positive_class: Option<String>,
    /// Extra `alias -> class` pairs replacing the default synonym table.
    #[serde(default)]
    pub synonyms: Option<BTreeMap<String, String>>,
    /// Square cell size for composed figures; defaults to the layout default.
    #[serde(default)]
    pub cell_size: Option<u32>,
    /// Parallel requests; defaults to the provider's per-minute budget.
    #[serde(default)]
    pub concurrency: Option<usize>,
}

impl RunConfig {
    pub fn new(
        dataset_root: impl Into<PathBuf>,
        strategy: StrategyKind,
        seed: u64,
        out_dir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            dataset_root: dataset_root.into(),
            strategy,
            reasoning_text: None,
            seed,
            shots_per_class: None,
            shot_policy: ShotPolicy::default(),
            provider: ProviderConfig::default(),
            abstention_policy: AbstentionPolicy::default(),
            out_dir: out_dir.into(),
            limit: None,
            first_class: None,
            positive_class: None,
            synonyms: None,
            cell_size: None,
            concurrency: None,
        }
    }

    pub fn resolved_strategy(&self) -> Result<Strategy, RunError> {
        let mut strategy = Strategy::new(self.strategy);
        if let Some(k) = self.shots_per_class {
            strategy = strategy.with_shots_per_class(k)?;
        }
        if let Some(text) = &self.reasoning_text {
            strategy = strategy.with_reasoning(text.clone())?;
        }
        strategy.validate()?;
        Ok(strategy)
    }

    pub fn layout_for(&self, n: usize) -> Result<GridLayout, ComposeError> {
        let layout = default_layout(n)?;
        Ok(match self.cell_size {
            Some(size) => GridLayout {
                cell_width: size,
                cell_height: size,
                ..layout
            },
            None => layout,
        })
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out_dir.join(MANIFEST_FILE)
    }

    fn synonyms_for(&self, task: &Task) -> Result<Synonyms, RunError> {
        Ok(match &self.synonyms {
            None => Synonyms::default_for(task),
            Some(map) => {
                Synonyms::from_pairs(task, map.iter().map(|(a, c)| (a.as_str(), c.as_str())))?
            }
        })
    }
}

/// Loads the dataset and applies the configured class order.
pub fn prepare_dataset(config: &RunConfig) -> Result<Dataset, RunError> {
    let dataset = load_dataset(&config.dataset_root)?;
    Ok(match &config.first_class {
        Some(name) => dataset.with_first_class(name)?,
        None => dataset,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestPlan {
    pub plan_index: usize,
    pub shots: Vec<LabeledImage>,
    pub queries: Vec<LabeledImage>,
}

/// Seed for the shots of plan `index` under per-request resampling.
fn plan_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finaliser over the combined value
    let mut z = seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Splits the test split into requests.
///
/// Queries come from the test split in id order (capped by `limit`) and are
/// grouped by the strategy's batch size, with a shorter final group when the
/// count does not divide evenly. Shots come only from the train split.
pub fn plan_requests(config: &RunConfig, dataset: &Dataset) -> Result<Vec<RequestPlan>, RunError> {
    let strategy = config.resolved_strategy()?;
    let mut tests: Vec<&LabeledImage> = dataset.split(Split::Test).collect();
    if let Some(limit) = config.limit {
        tests.truncate(limit);
    }
    if tests.is_empty() {
        return Err(RunError::Plan("no test items to query".into()));
    }

    let k = strategy.shots_per_class;
    let fixed = match config.shot_policy {
        ShotPolicy::FixedShots => Some(stratified_sample(dataset, Split::Train, k, config.seed)?),
        ShotPolicy::ResamplePerRequest => None,
    };
    tests
        .chunks(strategy.queries_per_request)
        .enumerate()
        .map(|(plan_index, group)| {
            let shots = match &fixed {
                Some(s) => s.clone(),
                None => stratified_sample(
                    dataset,
                    Split::Train,
                    k,
                    plan_seed(config.seed, plan_index),
                )?,
            };
            Ok(RequestPlan {
                plan_index,
                shots,
                queries: group.iter().map(|q| (*q).clone()).collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format_version: u32,
    pub config: RunConfig,
    pub task: Task,
    pub positive: ClassLabel,
    pub synonyms: Vec<(String, String)>,
    pub template_digests: Vec<(String, String)>,
    pub deviations: Vec<String>,
    pub validation: ValidationReport,
    pub plan_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub index: usize,
    pub group: usize,
    pub item_id: String,
    pub truth: ClassLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachmentRecord {
    pub name: String,
    pub media_type: String,
    pub digest: String,
    pub contents: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FigureRecord {
    pub layout: GridLayout,
    pub placements: Vec<Placement>,
    pub annotations: Vec<Annotation>,
    pub digest: String,
}

/// Values that legitimately differ between otherwise identical runs.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub request_id: Option<String>,
    pub latency_ms: u64,
    pub timestamp_ms: u64,
    pub completion_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub plan_index: usize,
    pub shots: Vec<String>,
    pub queries: Vec<QueryRecord>,
    pub prompt_text: String,
    pub attachments: Vec<AttachmentRecord>,
    pub figures: Vec<FigureRecord>,
    pub raw_response: Option<String>,
    pub error: Option<String>,
    pub attempts: u32,
    pub predictions: Vec<Prediction>,
    pub timing: Timing,
}

impl RequestRecord {
    fn expected(&self) -> Vec<(usize, String)> {
        self.queries
            .iter()
            .map(|q| (q.index, q.item_id.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParseCounts {
    pub parsed: u64,
    pub abstained: u64,
    pub unparseable: u64,
    pub ambiguous: u64,
}

impl ParseCounts {
    pub fn from_predictions<'a>(predictions: impl IntoIterator<Item = &'a Prediction>) -> Self {
        let mut counts = Self::default();
        for p in predictions {
            match p.status {
                PredictionStatus::Parsed => counts.parsed += 1,
                PredictionStatus::Abstained => counts.abstained += 1,
                PredictionStatus::Unparseable => counts.unparseable += 1,
                PredictionStatus::Ambiguous => counts.ambiguous += 1,
            }
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub predictions: Vec<Prediction>,
    pub parse_counts: ParseCounts,
    pub metrics: MetricsReport,
    pub rounded: RoundedRow,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ManifestRecord {
    Header(Box<ManifestHeader>),
    Request(Box<RequestRecord>),
    Summary(Box<SummaryRecord>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub header: ManifestHeader,
    pub requests: Vec<RequestRecord>,
    pub summary: SummaryRecord,
}

fn deviations(strategy: &Strategy, plans: &[RequestPlan]) -> Vec<String> {
    let mut notes = Vec::new();
    if strategy.kind == StrategyKind::Icl3 {
        notes.push(GROUP_COUNT_NOTE.to_string());
    }
    if strategy.kind.uses_reasoning()
        && strategy.reasoning_text.as_deref() == Some(crate::prompts::DEFAULT_REASONING)
    {
        notes.push(format!(
            "{}: built-in default reasoning text used",
            strategy.kind
        ));
    }
    if let Some(last) = plans.last() {
        if last.queries.len() < strategy.queries_per_request {
            notes.push(format!(
                "final request carries {} of {} queries",
                last.queries.len(),
                strategy.queries_per_request
            ));
        }
    }
    notes
}

fn build_header(
    config: &RunConfig,
    dataset: &Dataset,
    plans: &[RequestPlan],
) -> Result<ManifestHeader, RunError> {
    let strategy = config.resolved_strategy()?;
    let task = dataset.task().clone();
    let positive = match &config.positive_class {
        Some(name) => task
            .resolve(name)
            .cloned()
            .ok_or_else(|| RunError::Config(format!("unknown positive class `{name}`")))?,
        None => task.first.clone(),
    };
    let synonyms = config.synonyms_for(&task)?;
    Ok(ManifestHeader {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        synonyms: synonyms
            .iter()
            .map(|(a, l)| (a.to_string(), l.to_string()))
            .collect(),
        task,
        positive,
        template_digests: template_digests(),
        deviations: deviations(&strategy, plans),
        validation: validate(dataset),
        plan_count: plans.len(),
    })
}

/// Composes, renders and sends one plan.
fn execute_plan(
    plan: &RequestPlan,
    strategy: &Strategy,
    config: &RunConfig,
    header: &ManifestHeader,
    synonyms: &Synonyms,
    provider: &Provider,
) -> Result<RequestRecord, RunError> {
    let mut figures = Vec::new();
    if strategy.combine_into_figure {
        let groups: Vec<Vec<&LabeledImage>> = if strategy.kind.figure_per_query() {
            plan.queries.iter().map(|q| vec![q]).collect()
        } else {
            vec![plan.queries.iter().collect()]
        };
        for group in groups {
            let sources: Vec<GridSource> = plan
                .shots
                .iter()
                .chain(group)
                .map(GridSource::from)
                .collect();
            figures.push(compose_grid(&sources, &config.layout_for(sources.len())?)?);
        }
    }
    let package = render_prompt(
        strategy,
        &header.task,
        &plan.shots,
        &plan.queries,
        strategy.combine_into_figure.then_some(figures.as_slice()),
    )?;

    let queries: Vec<QueryRecord> = package
        .query_index_map
        .iter()
        .zip(&plan.queries)
        .map(|(q, item)| QueryRecord {
            index: q.index,
            group: q.group,
            item_id: q.item_id.clone(),
            truth: item.label.clone(),
        })
        .collect();
    let mut record = RequestRecord {
        plan_index: plan.plan_index,
        shots: plan.shots.iter().map(|s| s.id.clone()).collect(),
        queries,
        prompt_text: package.text(),
        attachments: package
            .attachments()
            .map(|a| AttachmentRecord {
                name: a.name.clone(),
                media_type: a.media_type.clone(),
                digest: a.digest.clone(),
                contents: a.contents.clone(),
            })
            .collect(),
        figures: figures
            .iter()
            .map(|f| {
                Ok(FigureRecord {
                    layout: f.layout,
                    placements: f.placements.clone(),
                    annotations: f.annotations.clone(),
                    digest: f.digest()?,
                })
            })
            .collect::<Result<_, ComposeError>>()?,
        raw_response: None,
        error: None,
        attempts: 0,
        predictions: Vec::new(),
        timing: Timing::default(),
    };

    match provider.send(&package) {
        Ok(response) => {
            record.predictions =
                parse_labels(&response.text, &record.expected(), &header.task, synonyms);
            record.raw_response = Some(response.text);
            record.attempts = response.attempts;
            record.timing.request_id = Some(response.request_id);
            record.timing.latency_ms = response.latency_ms;
            record.timing.timestamp_ms = response.timestamp_ms;
        }
        Err(e) if e.is_fatal() => return Err(e.into()),
        Err(e) => {
            record.error = Some(e.to_string());
            record.predictions = record
                .queries
                .iter()
                .map(|q| Prediction::unanswered(q.index, &q.item_id))
                .collect();
        }
    }
    Ok(record)
}

fn to_line(record: &ManifestRecord) -> String {
    let mut line = serde_json::to_string(record).expect("manifest records serialise");
    line.push('\n');
    line
}

fn append_line(file: &mut File, path: &Path, record: &ManifestRecord) -> Result<(), RunError> {
    file.write_all(to_line(record).as_bytes())
        .and_then(|_| file.sync_data())
        .map_err(io_err(path))
}

/// Parses manifest text into records, naming the first bad line.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>, RunError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            serde_json::from_str(line)
                .map_err(|e| RunError::Integrity(format!("line {}: {e}", n + 1)))
        })
        .collect()
}

/// Opens the manifest for appending and returns the records already present.
///
/// A trailing partial line (from a crash mid-write) and any previous summary
/// are cut off; they are rewritten when the run finishes.
fn open_manifest(
    path: &Path,
    header: &ManifestHeader,
) -> Result<(File, Vec<RequestRecord>), RunError> {
    if !path.exists() {
        let mut file = File::create(path).map_err(io_err(path))?;
        append_line(
            &mut file,
            path,
            &ManifestRecord::Header(Box::new(header.clone())),
        )?;
        return Ok((file, Vec::new()));
    }

    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let complete = match text.rfind('\n') {
        Some(pos) => &text[..=pos],
        None => "",
    };
    let mut keep = 0;
    let mut done = Vec::new();
    let mut saw_header = false;
    for line in complete.split_inclusive('\n') {
        let record: ManifestRecord = serde_json::from_str(line)
            .map_err(|e| RunError::Integrity(format!("{}: {e}", path.display())))?;
        match record {
            ManifestRecord::Header(h) => {
                if saw_header || serde_json::to_value(&*h).ok() != serde_json::to_value(header).ok() {
                    return Err(RunError::ResumeMismatch(path.to_path_buf()));
                }
                saw_header = true;
            }
            ManifestRecord::Request(r) => {
                if r.plan_index != done.len() {
                    return Err(RunError::Integrity(format!(
                        "expected plan {} but found plan {}",
                        done.len(),
                        r.plan_index
                    )));
                }
                done.push(*r);
            }
            ManifestRecord::Summary(_) => break,
        }
        keep += line.len();
    }
    if !saw_header {
        return Err(RunError::ResumeMismatch(path.to_path_buf()));
    }
    let file = OpenOptions::new()
        .write(true)
        .open(path)
        .map_err(io_err(path))?;
    file.set_len(keep as u64).map_err(io_err(path))?;
    let mut file = OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    file.flush().map_err(io_err(path))?;
    Ok((file, done))
}

fn summarise(
    header: &ManifestHeader,
    requests: &[RequestRecord],
    predictions: Vec<Prediction>,
    timestamp_ms: u64,
) -> Result<SummaryRecord, RunError> {
    let truths: HashMap<String, ClassLabel> = requests
        .iter()
        .flat_map(|r| &r.queries)
        .map(|q| (q.item_id.clone(), q.truth.clone()))
        .collect();
    let tally = confusion(
        &predictions,
        &truths,
        &header.task,
        &header.positive,
        header.config.abstention_policy,
    )?;
    let metrics = report_tally(&tally, &header.task, &header.positive)?;
    Ok(SummaryRecord {
        parse_counts: ParseCounts::from_predictions(&predictions),
        rounded: metrics.rounded(),
        metrics,
        predictions,
        timing: Timing {
            timestamp_ms,
            ..Timing::default()
        },
    })
}

/// Runs (or resumes) the experiment described by `config` against
/// `provider`, writing `<out_dir>/manifest.jsonl`.
///
/// Transport failures that survive retries mark the request's items
/// unparseable and the run continues. Credential failures and an exhausted
/// mock script stop the run; the records written so far stay on disk and a
/// later call with the same config picks up from there.
pub fn run_experiment(config: &RunConfig, provider: &Provider) -> Result<RunManifest, RunError> {
    let strategy = config.resolved_strategy()?;
    let dataset = prepare_dataset(config)?;
    let plans = plan_requests(config, &dataset)?;
    let header = build_header(config, &dataset, &plans)?;
    let synonyms = config.synonyms_for(&header.task)?;

    fs::create_dir_all(&config.out_dir).map_err(io_err(&config.out_dir))?;
    let path = config.manifest_path();
    let (mut file, mut records) = open_manifest(&path, &header)?;
    if records.len() > plans.len() {
        return Err(RunError::Integrity(format!(
            "manifest holds {} requests but only {} are planned",
            records.len(),
            plans.len()
        )));
    }

    let pending = &plans[records.len()..];
    if !pending.is_empty() {
        provider.check_credentials()?;
    }
    let workers = config
        .concurrency
        .unwrap_or(config.provider.max_requests_per_minute as usize)
        .min(provider.max_concurrency())
        .min(pending.len())
        .max(1);

    let next = AtomicUsize::new(0);
    let completed = AtomicU64::new(records.len() as u64);
    let abort = AtomicBool::new(false);
    let mut failure: Option<RunError> = None;

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, Result<RequestRecord, RunError>)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, abort, completed) = (&next, &abort, &completed);
            let (strategy, header, synonyms) = (&strategy, &header, &synonyms);
            scope.spawn(move || loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(plan) = pending.get(i) else { break };
                let result = execute_plan(plan, strategy, config, header, synonyms, provider)
                    .map(|mut r| {
                        r.timing.completion_seq = completed.fetch_add(1, Ordering::SeqCst) + 1;
                        r
                    });
                if result.is_err() {
                    abort.store(true, Ordering::SeqCst);
                }
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // Reorder buffer: write records strictly in plan order.
        let mut buffer: BTreeMap<usize, RequestRecord> = BTreeMap::new();
        let mut next_write = 0;
        for (i, result) in rx {
            match result {
                Ok(record) => {
                    buffer.insert(i, record);
                }
                Err(e) => {
                    if failure.is_none() {
                        failure = Some(e);
                    }
                    continue;
                }
            }
            while let Some(record) = buffer.remove(&next_write) {
                if failure.is_none() {
                    let line = ManifestRecord::Request(Box::new(record.clone()));
                    if let Err(e) = append_line(&mut file, &path, &line) {
                        failure = Some(e);
                        abort.store(true, Ordering::SeqCst);
                    }
                }
                records.push(record);
                next_write += 1;
            }
            if failure.is_some() {
                // Stop writing at the first gap; later records would break plan order.
                buffer.clear();
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }

    let predictions: Vec<Prediction> = records
        .iter()
        .flat_map(|r| r.predictions.iter().cloned())
        .collect();
    let summary = summarise(
        &header,
        &records,
        predictions,
        provider.clock().unix_millis(),
    )?;
    append_line(
        &mut file,
        &path,
        &ManifestRecord::Summary(Box::new(summary.clone())),
    )?;

    Ok(RunManifest {
        header,
        requests: records,
        summary,
    })
}

/// Reads and checks a complete manifest.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<RunManifest, RunError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(RunError::Integrity(format!(
            "{} ends with a partial record",
            path.display()
        )));
    }
    let mut records = parse_manifest(&text)?.into_iter();
    let header = match records.next() {
        Some(ManifestRecord::Header(h)) => *h,
        _ => return Err(RunError::Integrity("first record is not a header".into())),
    };
    let mut requests = Vec::new();
    let mut summary = None;
    for record in records {
        match (record, &summary) {
            (ManifestRecord::Request(r), None) => {
                if r.plan_index != requests.len() {
                    return Err(RunError::Integrity(format!(
                        "request record for plan {} is out of order (expected {})",
                        r.plan_index,
                        requests.len()
                    )));
                }
                requests.push(*r);
            }
            (ManifestRecord::Summary(s), None) => summary = Some(*s),
            _ => {
                return Err(RunError::Integrity(
                    "records found after the summary or a second header".into(),
                ))
            }
        }
    }
    let summary = summary.ok_or_else(|| {
        RunError::Integrity(format!(
            "no summary record ({} of {} requests present)",
            requests.len(),
            header.plan_count
        ))
    })?;
    if requests.len() != header.plan_count {
        return Err(RunError::Integrity(format!(
            "{} request records for {} planned requests",
            requests.len(),
            header.plan_count
        )));
    }
    Ok(RunManifest {
        header,
        requests,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOutcome {
    pub report: MetricsReport,
    pub parse_counts: ParseCounts,
    pub embedded: MetricsReport,
    pub embedded_parse_counts: ParseCounts,
    /// Whether a synonym table other than the recorded one was used.
    pub parser_changed: bool,
}

impl ScoreOutcome {
    pub fn matches_embedded(&self) -> bool {
        self.report == self.embedded
    }
}

/// Re-parses every raw response in the manifest and scores the result.
/// No network access is involved. `synonyms` overrides the recorded table.
pub fn score_manifest(
    path: impl AsRef<Path>,
    synonyms: Option<&Synonyms>,
) -> Result<ScoreOutcome, RunError> {
    let manifest = read_manifest(path)?;
    let header = &manifest.header;
    let recorded = Synonyms::from_pairs(
        &header.task,
        header
            .synonyms
            .iter()
            .map(|(a, c)| (a.as_str(), c.as_str())),
    )?;
    let table = synonyms.unwrap_or(&recorded);
    let predictions: Vec<Prediction> = manifest
        .requests
        .iter()
        .flat_map(|r| match &r.raw_response {
            Some(raw) => parse_labels(raw, &r.expected(), &header.task, table),
            None => r
                .queries
                .iter()
                .map(|q| Prediction::unanswered(q.index, &q.item_id))
                .collect(),
        })
        .collect();
    let summary = summarise(header, &manifest.requests, predictions, 0)?;
    Ok(ScoreOutcome {
        report: summary.metrics,
        parse_counts: summary.parse_counts,
        embedded: manifest.summary.metrics,
        embedded_parse_counts: manifest.summary.parse_counts,
        parser_changed: *table != recorded,
    })
}

fn strip_timing(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            map.remove("timing");
            map.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

/// Manifest text with every `timing` object removed, for comparing runs.
pub fn stable_manifest_text(path: impl AsRef<Path>) -> Result<String, RunError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = String::with_capacity(text.len());
    for (n, line) in text.lines().enumerate() {
        let mut value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| RunError::Integrity(format!("line {}: {e}", n + 1)))?;
        strip_timing(&mut value);
        out.push_str(&value.to_string());
        out.push('\n');
    }
    Ok(out)
}

pub const SUMMARY_CSV_HEADER: &str =
    "strategy,seed,tp,fp,fn,tn,p_pos,r_pos,f1_pos,p_neg,r_neg,f1_neg,accuracy,scored,excluded";

/// One CSV row per manifest, in the order given.
pub fn summary_csv(manifests: &[RunManifest]) -> String {
    let mut out = String::from(SUMMARY_CSV_HEADER);
    out.push('\n');
    for m in manifests {
        let r = &m.summary.metrics;
        let c = &r.matrix;
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{},{}\n",
            m.header.config.strategy,
            m.header.config.seed,
            c.true_pos,
            c.false_pos,
            c.false_neg,
            c.true_neg,
            r.positive.precision,
            r.positive.recall,
            r.positive.f1,
            r.negative.precision,
            r.negative.recall,
            r.negative.f1,
            r.accuracy,
            r.scored,
            r.excluded
        ));
    }
    out
}
