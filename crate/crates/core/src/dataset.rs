//! Class-labelled image datasets laid out as `<root>/{train,test}/<class>/<file>`.
//!
//! Labels come from directory names. Loading decodes every candidate file so
//! that broken images are reported up front instead of failing mid-run.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Balance ratios below this are flagged in validation reports.
pub const BALANCE_FLAG_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("dataset structure: {0}")]
    Structure(String),
    #[error("split `{split}` has {found} class directories, expected exactly 2")]
    TaskArity { split: Split, found: usize },
    #[error("not enough `{class}` items in {split}: need {needed}, have {available} (short by {})", needed - available)]
    Sampling {
        class: String,
        split: Split,
        needed: usize,
        available: usize,
    },
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// A class name. Equality ignores ASCII case and surrounding whitespace.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassLabel(String);

impl ClassLabel {
    pub fn new(name: impl AsRef<str>) -> Option<Self> {
        let trimmed = name.as_ref().trim();
        if trimmed.is_empty() {
            None
        } else {
            Some(Self(trimmed.to_string()))
        }
    }

    pub fn name(&self) -> &str {
        &self.0
    }

    fn key(&self) -> String {
        self.0.trim().to_lowercase()
    }

    pub fn matches(&self, text: &str) -> bool {
        self.key() == text.trim().to_lowercase()
    }
}

impl PartialEq for ClassLabel {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for ClassLabel {}

impl Hash for ClassLabel {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state);
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The two classes of a binary task, in configured order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub first: ClassLabel,
    pub second: ClassLabel,
}

impl Task {
    pub fn new(first: ClassLabel, second: ClassLabel) -> Option<Self> {
        (first != second).then_some(Self { first, second })
    }

    pub fn labels(&self) -> [&ClassLabel; 2] {
        [&self.first, &self.second]
    }

    pub fn resolve(&self, name: &str) -> Option<&ClassLabel> {
        self.labels().into_iter().find(|l| l.matches(name))
    }

    pub fn other(&self, label: &ClassLabel) -> &ClassLabel {
        if *label == self.first {
            &self.second
        } else {
            &self.first
        }
    }

    /// Same task with the given class moved to the front.
    pub fn with_first(&self, name: &str) -> Result<Task, DatasetError> {
        if self.first.matches(name) {
            Ok(self.clone())
        } else if self.second.matches(name) {
            Ok(Task {
                first: self.second.clone(),
                second: self.first.clone(),
            })
        } else {
            Err(DatasetError::UnknownClass(name.to_string()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledImage {
    /// `<split>/<class>/<filename>`
    pub id: String,
    pub path: PathBuf,
    pub label: ClassLabel,
    pub split: Split,
    pub width: u32,
    pub height: u32,
}

/// A file skipped during loading.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadWarning {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    task: Task,
    items: Vec<LabeledImage>,
    counts: BTreeMap<(Split, String), usize>,
    warnings: Vec<LoadWarning>,
}

impl Dataset {
    /// Builds a dataset from already-decoded items. Items are kept sorted by id.
    pub fn from_items(
        root: impl Into<PathBuf>,
        task: Task,
        mut items: Vec<LabeledImage>,
        warnings: Vec<LoadWarning>,
    ) -> Result<Self, DatasetError> {
        for item in &items {
            if task.resolve(item.label.name()).is_none() {
                return Err(DatasetError::UnknownClass(item.label.to_string()));
            }
        }
        items.sort_by(|a, b| a.id.cmp(&b.id));
        let counts = count_items(&task, &items);
        Ok(Self {
            root: root.into(),
            task,
            items,
            counts,
            warnings,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn items(&self) -> &[LabeledImage] {
        &self.items
    }

    pub fn warnings(&self) -> &[LoadWarning] {
        &self.warnings
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &LabeledImage> {
        self.items.iter().filter(move |i| i.split == split)
    }

    pub fn count(&self, split: Split, label: &ClassLabel) -> usize {
        self.counts
            .get(&(split, label.key()))
            .copied()
            .unwrap_or_default()
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.task.labels().iter().map(|l| self.count(split, l)).sum()
    }

    pub fn get(&self, id: &str) -> Option<&LabeledImage> {
        self.items
            .binary_search_by(|i| i.id.as_str().cmp(id))
            .ok()
            .map(|idx| &self.items[idx])
    }

    /// Reorders the task so that `name` is the first class.
    pub fn with_first_class(mut self, name: &str) -> Result<Self, DatasetError> {
        self.task = self.task.with_first(name)?;
        Ok(self)
    }
}

fn count_items(task: &Task, items: &[LabeledImage]) -> BTreeMap<(Split, String), usize> {
    let mut counts = BTreeMap::new();
    for split in Split::ALL {
        for label in task.labels() {
            counts.insert((split, label.key()), 0);
        }
    }
    for item in items {
        *counts.entry((item.split, item.label.key())).or_insert(0) += 1;
    }
    counts
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<fs::DirEntry>, DatasetError> {
    let mut entries = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err(dir))?;
    entries.sort_by_key(|e| e.file_name());
    Ok(entries)
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

/// Loads `<root>/{train,test}/<class>/*.{png,jpg,jpeg}`.
///
/// Both splits must hold the same two class directories. Classes are ordered
/// lexically by directory name. Files that fail to decode are skipped and
/// reported through [`Dataset::warnings`].
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(DatasetError::Structure(format!(
            "{} is not a directory",
            root.display()
        )));
    }

    let mut class_names: Option<Vec<String>> = None;
    let mut items = Vec::new();
    let mut warnings = Vec::new();

    for split in Split::ALL {
        let split_dir = root.join(split.dir_name());
        if !split_dir.is_dir() {
            return Err(DatasetError::Structure(format!(
                "missing split directory {}",
                split_dir.display()
            )));
        }
        let class_dirs: Vec<_> = sorted_entries(&split_dir)?
            .into_iter()
            .filter(|e| e.path().is_dir())
            .collect();
        if class_dirs.len() != 2 {
            return Err(DatasetError::TaskArity {
                split,
                found: class_dirs.len(),
            });
        }
        let names: Vec<String> = class_dirs
            .iter()
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        match &class_names {
            None => class_names = Some(names.clone()),
            Some(expected) if *expected != names => {
                return Err(DatasetError::Structure(format!(
                    "split {split} has classes {names:?}, expected {expected:?}"
                )));
            }
            Some(_) => {}
        }

        for (class_dir, class_name) in class_dirs.iter().zip(&names) {
            let label = ClassLabel::new(class_name).ok_or_else(|| {
                DatasetError::Structure(format!("blank class directory name in {split}"))
            })?;
            for entry in sorted_entries(&class_dir.path())? {
                let path = entry.path();
                if !path.is_file() || !has_image_extension(&path) {
                    continue;
                }
                match image::image_dimensions(&path) {
                    Ok(_) => {}
                    Err(e) => {
                        warnings.push(LoadWarning {
                            path,
                            reason: e.to_string(),
                        });
                        continue;
                    }
                }
                // Dimensions alone only read the header; decode the full raster.
                let decoded = image::ImageReader::open(&path)
                    .map_err(|e| e.to_string())
                    .and_then(|r| r.with_guessed_format().map_err(|e| e.to_string()))
                    .and_then(|r| r.decode().map_err(|e| e.to_string()));
                match decoded {
                    Ok(img) => items.push(LabeledImage {
                        id: format!(
                            "{}/{}/{}",
                            split.dir_name(),
                            class_name,
                            entry.file_name().to_string_lossy()
                        ),
                        path,
                        label: label.clone(),
                        split,
                        width: img.width(),
                        height: img.height(),
                    }),
                    Err(reason) => warnings.push(LoadWarning { path, reason }),
                }
            }
        }
    }

    let names = class_names.unwrap_or_default();
    let task = Task::new(
        ClassLabel::new(&names[0]).expect("checked non-blank"),
        ClassLabel::new(&names[1]).expect("checked non-blank"),
    )
    .ok_or_else(|| {
        DatasetError::Structure("class directories differ only by case".to_string())
    })?;
    Dataset::from_items(root, task, items, warnings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCount {
    pub class: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: Split,
    pub classes: Vec<ClassCount>,
    pub total: usize,
    /// Smallest class count divided by largest; 0 when a class is empty.
    pub balance_ratio: f64,
    pub balance_flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateContent {
    pub digest: String,
    pub ids: Vec<String>,
    pub across_classes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub splits: Vec<SplitSummary>,
    pub min_dimensions: Option<(u32, u32)>,
    pub max_dimensions: Option<(u32, u32)>,
    pub duplicate_ids: Vec<String>,
    pub duplicate_content: Vec<DuplicateContent>,
    pub load_warnings: usize,
}

impl ValidationReport {
    pub fn split(&self, split: Split) -> Option<&SplitSummary> {
        self.splits.iter().find(|s| s.split == split)
    }

    pub fn is_clean(&self) -> bool {
        self.duplicate_ids.is_empty()
            && self.duplicate_content.is_empty()
            && self.load_warnings == 0
            && self.splits.iter().all(|s| !s.balance_flagged)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.splits {
            let counts: Vec<String> = s
                .classes
                .iter()
                .map(|c| format!("{}={}", c.class, c.count))
                .collect();
            writeln!(
                f,
                "{:<5} total={:<4} {}  balance={:.2}{}",
                s.split,
                s.total,
                counts.join(" "),
                s.balance_ratio,
                if s.balance_flagged { " [imbalanced]" } else { "" }
            )?;
        }
        match (self.min_dimensions, self.max_dimensions) {
            (Some((minw, minh)), Some((maxw, maxh))) => {
                writeln!(f, "dimensions min={minw}x{minh} max={maxw}x{maxh}")?
            }
            _ => writeln!(f, "dimensions n/a")?,
        }
        writeln!(f, "duplicate ids: {}", self.duplicate_ids.len())?;
        for dup in &self.duplicate_content {
            writeln!(
                f,
                "duplicate content{}: {}",
                if dup.across_classes {
                    " across classes"
                } else {
                    ""
                },
                dup.ids.join(", ")
            )?;
        }
        write!(f, "load warnings: {}", self.load_warnings)
    }
}

/// Summarises counts, image sizes, duplicates and class balance.
///
/// Content duplicates are found by hashing file bytes; files that cannot be
/// re-read are ignored here since loading already decoded them once.
pub fn validate(dataset: &Dataset) -> ValidationReport {
    let task = dataset.task();
    let splits = Split::ALL
        .iter()
        .map(|&split| {
            let classes: Vec<ClassCount> = task
                .labels()
                .iter()
                .map(|l| ClassCount {
                    class: l.to_string(),
                    count: dataset.count(split, l),
                })
                .collect();
            let min = classes.iter().map(|c| c.count).min().unwrap_or(0);
            let max = classes.iter().map(|c| c.count).max().unwrap_or(0);
            let balance_ratio = if max == 0 {
                0.0
            } else {
                min as f64 / max as f64
            };
            SplitSummary {
                split,
                total: classes.iter().map(|c| c.count).sum(),
                classes,
                balance_ratio,
                balance_flagged: balance_ratio < BALANCE_FLAG_THRESHOLD,
            }
        })
        .collect();

    let items = dataset.items();
    let min_dimensions = items
        .iter()
        .map(|i| (i.width, i.height))
        .min_by_key(|&(w, h)| u64::from(w) * u64::from(h));
    let max_dimensions = items
        .iter()
        .map(|i| (i.width, i.height))
        .max_by_key(|&(w, h)| u64::from(w) * u64::from(h));

    let mut seen: HashMap<&str, usize> = HashMap::new();
    for item in items {
        *seen.entry(item.id.as_str()).or_default() += 1;
    }
    let mut duplicate_ids: Vec<String> = seen
        .into_iter()
        .filter(|&(_, n)| n > 1)
        .map(|(id, _)| id.to_string())
        .collect();
    duplicate_ids.sort();

    let mut by_digest: BTreeMap<String, Vec<&LabeledImage>> = BTreeMap::new();
    for item in items {
        if let Ok(bytes) = fs::read(&item.path) {
            by_digest
                .entry(hex::encode(Sha256::digest(&bytes)))
                .or_default()
                .push(item);
        }
    }
    let duplicate_content = by_digest
        .into_iter()
        .filter(|(_, group)| group.len() > 1)
        .map(|(digest, group)| DuplicateContent {
            across_classes: group.iter().any(|i| i.label != group[0].label),
            ids: group.iter().map(|i| i.id.clone()).collect(),
            digest,
        })
        .collect();

    ValidationReport {
        splits,
        min_dimensions,
        max_dimensions,
        duplicate_ids,
        duplicate_content,
        load_warnings: dataset.warnings().len(),
    }
}

/// Draws `k_per_class` items of each class from `split`, first class first.
///
/// Candidates are taken in id order and chosen with a ChaCha8 generator
/// seeded from `seed`, so the output depends only on the dataset contents
/// and the arguments.
pub fn stratified_sample(
    dataset: &Dataset,
    split: Split,
    k_per_class: usize,
    seed: u64,
) -> Result<Vec<LabeledImage>, DatasetError> {
    let task = dataset.task();
    let pools: Vec<Vec<&LabeledImage>> = task
        .labels()
        .iter()
        .map(|l| dataset.split(split).filter(|i| i.label == **l).collect())
        .collect();
    for (label, pool) in task.labels().iter().zip(&pools) {
        if pool.len() < k_per_class {
            return Err(DatasetError::Sampling {
                class: label.to_string(),
                split,
                needed: k_per_class,
                available: pool.len(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(k_per_class * 2);
    for pool in &pools {
        for idx in sample(&mut rng, pool.len(), k_per_class) {
            out.push(pool[idx].clone());
        }
    }
    Ok(out)
}
