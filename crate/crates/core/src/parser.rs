//! Label extraction from free-text model responses.
//!
//! Responses are scanned line by line. For each expected query the first
//! unused `Image <n>` mention followed by a class term wins; a response for a
//! single query may instead start with the bare label. Failures are reported
//! as statuses rather than errors so a run never aborts on model phrasing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, Task};

/// Phrases that mark a refusal or abstention.
const REFUSAL_MARKERS: [&str; 12] = [
    "i cannot",
    "i can't",
    "i can not",
    "unable to",
    "not able to",
    "i'm sorry",
    "i am sorry",
    "cannot provide",
    "cannot determine",
    "not possible to",
    "consult a",
    "as an ai",
];

/// Words that may introduce a bare label, e.g. `**Label:** COVID`.
const LABEL_PREFIXES: [&str; 6] = [
    "label",
    "classification",
    "prediction",
    "answer",
    "class",
    "result",
];

/// A term preceded by one of these is not counted as a mention.
const NEGATIONS: [&str; 4] = ["non-", "non ", "not ", "no "];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionStatus {
    Parsed,
    Abstained,
    Unparseable,
    Ambiguous,
}

impl PredictionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictionStatus::Parsed => "parsed",
            PredictionStatus::Abstained => "abstained",
            PredictionStatus::Unparseable => "unparseable",
            PredictionStatus::Ambiguous => "ambiguous",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub item_id: String,
    pub index: usize,
    pub predicted: Option<ClassLabel>,
    pub status: PredictionStatus,
    pub explanation: String,
    pub matched_line: Option<String>,
}

impl Prediction {
    /// Placeholder for a query whose request never produced a response.
    pub fn unanswered(index: usize, item_id: impl Into<String>) -> Self {
        Self {
            item_id: item_id.into(),
            index,
            predicted: None,
            status: PredictionStatus::Unparseable,
            explanation: String::new(),
            matched_line: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynonymError {
    #[error("alias `{alias}` maps to both `{first}` and `{second}`")]
    Conflict {
        alias: String,
        first: String,
        second: String,
    },
    #[error("alias `{alias}` maps to unknown class `{class}`")]
    UnknownClass { alias: String, class: String },
}

/// Alias table, lower-cased alias to class.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Synonyms {
    aliases: BTreeMap<String, ClassLabel>,
}

impl Synonyms {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a table from `alias -> class name` pairs, resolving names
    /// against `task`. An alias may not point at both classes, and may not
    /// be the other class's own name.
    pub fn from_pairs<'a>(
        task: &Task,
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, SynonymError> {
        let mut aliases: BTreeMap<String, ClassLabel> = BTreeMap::new();
        for label in task.labels() {
            aliases.insert(label.name().trim().to_lowercase(), label.clone());
        }
        for (alias, class) in pairs {
            let key = alias.trim().to_lowercase();
            let label = task
                .resolve(class)
                .ok_or_else(|| SynonymError::UnknownClass {
                    alias: alias.to_string(),
                    class: class.to_string(),
                })?;
            if let Some(prev) = aliases.get(&key) {
                if prev != label {
                    return Err(SynonymError::Conflict {
                        alias: key,
                        first: prev.to_string(),
                        second: label.to_string(),
                    });
                }
            }
            aliases.insert(key, label.clone());
        }
        for label in task.labels() {
            aliases.remove(&label.name().trim().to_lowercase());
        }
        Ok(Self { aliases })
    }

    /// Default chest X-ray table. Only classes present in `task` receive
    /// aliases; other tasks get an empty table.
    pub fn default_for(task: &Task) -> Self {
        let mut pairs = Vec::new();
        if let Some(c) = task.resolve("covid") {
            for alias in ["covid", "covid-19", "positive"] {
                pairs.push((alias, c.name()));
            }
        }
        if let Some(n) = task.resolve("normal") {
            for alias in ["normal", "healthy", "negative"] {
                pairs.push((alias, n.name()));
            }
        }
        Self::from_pairs(task, pairs).expect("default aliases are disjoint")
    }

    pub fn len(&self) -> usize {
        self.aliases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aliases.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ClassLabel)> {
        self.aliases.iter().map(|(a, l)| (a.as_str(), l))
    }

    /// Lower-cased terms that name `label`, including its own name.
    pub fn terms_for(&self, label: &ClassLabel) -> Vec<String> {
        let mut terms = vec![label.name().trim().to_lowercase()];
        terms.extend(
            self.aliases
                .iter()
                .filter(|(_, l)| *l == label)
                .map(|(a, _)| a.clone()),
        );
        terms.sort();
        terms.dedup();
        terms
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Whether `term` occurs in `hay` as a whole word and is not negated.
/// Both inputs are lower-case.
fn mentions(hay: &str, term: &str) -> bool {
    if term.is_empty() {
        return false;
    }
    hay.match_indices(term).any(|(pos, _)| {
        let before = hay[..pos].chars().next_back();
        let after = hay[pos + term.len()..].chars().next();
        let bounded = !before.is_some_and(is_word_char) && !after.is_some_and(is_word_char);
        bounded && !NEGATIONS.iter().any(|n| hay[..pos].ends_with(n))
    })
}

struct ClassTerms<'a> {
    labels: [&'a ClassLabel; 2],
    terms: [Vec<String>; 2],
}

impl<'a> ClassTerms<'a> {
    fn new(task: &'a Task, synonyms: &Synonyms) -> Self {
        Self {
            labels: task.labels(),
            terms: [
                synonyms.terms_for(&task.first),
                synonyms.terms_for(&task.second),
            ],
        }
    }

    /// Classes mentioned in `text`.
    fn found(&self, text: &str) -> Vec<&'a ClassLabel> {
        let lower = text.to_lowercase();
        (0..2)
            .filter(|&i| self.terms[i].iter().any(|t| mentions(&lower, t)))
            .map(|i| self.labels[i])
            .collect()
    }

    /// Class whose term starts `text`, if any.
    fn leading(&self, text: &str) -> Option<&'a ClassLabel> {
        let lower = text.to_lowercase();
        (0..2)
            .filter_map(|i| {
                self.terms[i]
                    .iter()
                    .filter(|t| {
                        lower.starts_with(t.as_str())
                            && !lower[t.len()..].chars().next().is_some_and(is_word_char)
                    })
                    .map(|t| (t.len(), self.labels[i]))
                    .max_by_key(|(len, _)| *len)
            })
            .max_by_key(|(len, _)| *len)
            .map(|(_, l)| l)
    }
}

/// An `Image <n>` mention and the text that follows it up to the next mention.
#[derive(Debug)]
struct Segment {
    number: usize,
    start: usize,
    end: usize,
}

fn image_segments(line: &str) -> Vec<Segment> {
    let lower = line.to_lowercase();
    // Lower-casing can change byte lengths outside ASCII; fall back to no
    // segments rather than mis-slicing.
    if lower.len() != line.len() {
        return Vec::new();
    }
    let bytes = lower.as_bytes();
    let mut found: Vec<(usize, usize, usize)> = Vec::new();
    for (pos, _) in lower.match_indices("image") {
        if lower[..pos].chars().next_back().is_some_and(is_word_char) {
            continue;
        }
        let mut i = pos + "image".len();
        while i < bytes.len() && (bytes[i] == b' ' || bytes[i] == b'#') {
            i += 1;
        }
        let digits_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == digits_start || lower[i..].chars().next().is_some_and(is_word_char) {
            continue;
        }
        if let Ok(number) = lower[digits_start..i].parse() {
            found.push((pos, i, number));
        }
    }
    found
        .iter()
        .enumerate()
        .map(|(k, &(_, after, number))| Segment {
            number,
            start: after,
            end: found.get(k + 1).map_or(line.len(), |next| next.0),
        })
        .collect()
}

/// Strips markdown decoration and a leading "Label:"-style prefix.
fn strip_label_prefix(line: &str) -> &str {
    let decoration = |c: char| c.is_whitespace() || "*#_`>-:".contains(c);
    let mut rest = line.trim_start_matches(decoration);
    let lower = rest.to_lowercase();
    for prefix in LABEL_PREFIXES {
        if lower.starts_with(prefix) && lower.len() == rest.len() {
            let after = &rest[prefix.len()..];
            let trimmed = after.trim_start_matches(['*', '_', ' ']);
            if let Some(value) = trimmed.strip_prefix(':') {
                rest = value.trim_start_matches(decoration);
                break;
            }
            if trimmed.trim().is_empty() {
                rest = "";
                break;
            }
        }
    }
    rest
}

fn is_refusal(raw: &str) -> bool {
    let lower = raw.to_lowercase().replace('\u{2019}', "'");
    REFUSAL_MARKERS.iter().any(|m| lower.contains(m))
}

/// Parses one label per expected `(prompt index, item id)` pair.
pub fn parse_labels(
    raw: &str,
    expected: &[(usize, String)],
    task: &Task,
    synonyms: &Synonyms,
) -> Vec<Prediction> {
    let classes = ClassTerms::new(task, synonyms);
    let lines: Vec<&str> = raw.lines().collect();
    let segments: Vec<Vec<Segment>> = lines.iter().map(|l| image_segments(l)).collect();
    let mut used_segment: Vec<Vec<bool>> = segments.iter().map(|s| vec![false; s.len()]).collect();
    let mut used_line = vec![false; lines.len()];

    let mut outcomes: Vec<(PredictionStatus, Option<ClassLabel>, Option<usize>)> = Vec::new();
    for (index, _) in expected {
        let mut outcome = None;
        'lines: for (li, line) in lines.iter().enumerate() {
            for (si, seg) in segments[li].iter().enumerate() {
                if seg.number != *index || used_segment[li][si] {
                    continue;
                }
                let found = classes.found(&line[seg.start..seg.end]);
                let status = match found.as_slice() {
                    [] => continue,
                    [one] => (PredictionStatus::Parsed, Some((*one).clone())),
                    _ => (PredictionStatus::Ambiguous, None),
                };
                used_segment[li][si] = true;
                used_line[li] = true;
                outcome = Some((status.0, status.1, Some(li)));
                break 'lines;
            }
        }

        if outcome.is_none() && expected.len() == 1 {
            let first = lines
                .iter()
                .enumerate()
                .find(|(li, l)| !used_line[*li] && !strip_label_prefix(l).trim().is_empty());
            if let Some((li, line)) = first {
                if let Some(lead) = classes.leading(strip_label_prefix(line)) {
                    used_line[li] = true;
                    outcome = Some(if classes.found(line).len() > 1 {
                        (PredictionStatus::Ambiguous, None, Some(li))
                    } else {
                        (PredictionStatus::Parsed, Some(lead.clone()), Some(li))
                    });
                }
            }
        }

        outcomes.push(outcome.unwrap_or_else(|| {
            let status = if is_refusal(raw) {
                PredictionStatus::Abstained
            } else {
                PredictionStatus::Unparseable
            };
            (status, None, None)
        }));
    }

    let explanation = lines
        .iter()
        .zip(&used_line)
        .filter(|(_, used)| !**used)
        .map(|(l, _)| l.trim())
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .to_string();

    expected
        .iter()
        .zip(outcomes)
        .map(|((index, item_id), (status, predicted, line))| Prediction {
            item_id: item_id.clone(),
            index: *index,
            predicted,
            status,
            explanation: explanation.clone(),
            matched_line: line.map(|li| lines[li].to_string()),
        })
        .collect()
}
