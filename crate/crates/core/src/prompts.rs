//! Prompt strategies and their rendering into chat messages.
//!
//! Template wording lives in `templates/*.txt` and is compiled in. Rendering
//! packs every image and the instruction text into one user message; images
//! come first because the instructions refer to "the above images".

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::composer::{ComposeError, ComposedFigure};
use crate::dataset::{LabeledImage, Task};

/// Observation used in the reasoning strategies' explanation block when the
/// run config does not supply one. Not clinical guidance.
pub const DEFAULT_REASONING: &str = "visible opacities in the lung fields";

/// Wording change applied to the three-group template.
pub const GROUP_COUNT_NOTE: &str =
    "icl3: instruction asks for one result per group instead of a fixed \"4 results\"";

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("{kind} expects {expected} example images, got {got}")]
    ExampleArity {
        kind: StrategyKind,
        expected: usize,
        got: usize,
    },
    #[error("{kind} expects 1..={max} query images, got {got}")]
    QueryArity {
        kind: StrategyKind,
        max: usize,
        got: usize,
    },
    #[error("examples must list all `{first}` images before `{second}` images")]
    ExampleOrder { first: String, second: String },
    #[error("{kind} requires reasoning text")]
    MissingReasoning { kind: StrategyKind },
    #[error("{kind} does not take reasoning text")]
    UnexpectedReasoning { kind: StrategyKind },
    #[error("{kind}: {detail}")]
    Figures { kind: StrategyKind, detail: String },
    #[error("invalid shot count {shots} for {kind}: {detail}")]
    Shots {
        kind: StrategyKind,
        shots: usize,
        detail: String,
    },
    #[error("cannot read attachment `{id}`: {source}")]
    Attachment { id: String, source: std::io::Error },
    #[error(transparent)]
    Compose(#[from] ComposeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "naive")]
    Naive,
    #[serde(rename = "icl1")]
    Icl1,
    #[serde(rename = "icl2")]
    Icl2,
    #[serde(rename = "icl3")]
    Icl3,
    #[serde(rename = "icl4")]
    Icl4,
    #[serde(rename = "icl-r1")]
    IclR1,
    #[serde(rename = "icl-r2")]
    IclR2,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 7] = [
        StrategyKind::Naive,
        StrategyKind::Icl1,
        StrategyKind::Icl2,
        StrategyKind::Icl3,
        StrategyKind::Icl4,
        StrategyKind::IclR1,
        StrategyKind::IclR2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Naive => "naive",
            StrategyKind::Icl1 => "icl1",
            StrategyKind::Icl2 => "icl2",
            StrategyKind::Icl3 => "icl3",
            StrategyKind::Icl4 => "icl4",
            StrategyKind::IclR1 => "icl-r1",
            StrategyKind::IclR2 => "icl-r2",
        }
    }

    pub fn default_shots_per_class(self) -> usize {
        match self {
            StrategyKind::Naive => 0,
            StrategyKind::Icl1 | StrategyKind::Icl2 | StrategyKind::Icl3 | StrategyKind::IclR1 => 1,
            StrategyKind::Icl4 | StrategyKind::IclR2 => 3,
        }
    }

    pub fn queries_per_request(self) -> usize {
        match self {
            StrategyKind::Icl3 | StrategyKind::Icl4 | StrategyKind::IclR2 => 3,
            _ => 1,
        }
    }

    pub fn combine_into_figure(self) -> bool {
        !matches!(
            self,
            StrategyKind::Naive | StrategyKind::Icl1 | StrategyKind::IclR1
        )
    }

    pub fn uses_reasoning(self) -> bool {
        matches!(self, StrategyKind::IclR1 | StrategyKind::IclR2)
    }

    /// Each query gets its own figure, with the examples repeated in it.
    pub fn figure_per_query(self) -> bool {
        self == StrategyKind::Icl3
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown strategy `{0}` (expected naive, icl1..icl4, icl-r1, icl-r2)")]
pub struct UnknownStrategy(String);

impl FromStr for StrategyKind {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        Ok(match norm.as_str() {
            "naive" => StrategyKind::Naive,
            "icl1" => StrategyKind::Icl1,
            "icl2" => StrategyKind::Icl2,
            "icl3" => StrategyKind::Icl3,
            "icl4" => StrategyKind::Icl4,
            "iclr1" => StrategyKind::IclR1,
            "iclr2" => StrategyKind::IclR2,
            _ => return Err(UnknownStrategy(s.to_string())),
        })
    }
}

/// Returns the stored template for `kind`, placeholders intact.
pub fn template_text(kind: StrategyKind) -> &'static str {
    match kind {
        StrategyKind::Naive => include_str!("../templates/naive.txt"),
        StrategyKind::Icl1 => include_str!("../templates/icl1.txt"),
        StrategyKind::Icl2 => include_str!("../templates/icl2.txt"),
        StrategyKind::Icl3 => include_str!("../templates/icl3.txt"),
        StrategyKind::Icl4 => include_str!("../templates/icl4.txt"),
        StrategyKind::IclR1 => include_str!("../templates/icl_r1.txt"),
        StrategyKind::IclR2 => include_str!("../templates/icl_r2.txt"),
    }
}

/// SHA-256 of every template, keyed by strategy name.
pub fn template_digests() -> Vec<(String, String)> {
    StrategyKind::ALL
        .iter()
        .map(|&k| {
            (
                k.to_string(),
                hex::encode(Sha256::digest(template_text(k).as_bytes())),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub shots_per_class: usize,
    pub queries_per_request: usize,
    pub combine_into_figure: bool,
    pub reasoning_text: Option<String>,
}

impl Strategy {
    /// Strategy with its standard arities. Reasoning strategies start with
    /// [`DEFAULT_REASONING`].
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            shots_per_class: kind.default_shots_per_class(),
            queries_per_request: kind.queries_per_request(),
            combine_into_figure: kind.combine_into_figure(),
            reasoning_text: kind.uses_reasoning().then(|| DEFAULT_REASONING.to_string()),
        }
    }

    pub fn with_reasoning(mut self, text: impl Into<String>) -> Result<Self, RenderError> {
        if !self.kind.uses_reasoning() {
            return Err(RenderError::UnexpectedReasoning { kind: self.kind });
        }
        self.reasoning_text = Some(text.into());
        Ok(self)
    }

    /// Overrides the number of in-context examples per class. Combined
    /// strategies must still fit their figures in a 3x3 grid.
    pub fn with_shots_per_class(mut self, shots: usize) -> Result<Self, RenderError> {
        let err = |detail: &str| RenderError::Shots {
            kind: self.kind,
            shots,
            detail: detail.to_string(),
        };
        if self.kind == StrategyKind::Naive {
            if shots != 0 {
                return Err(err("the naive strategy is zero-shot"));
            }
        } else if shots == 0 {
            return Err(err("in-context strategies need at least one shot per class"));
        } else if self.combine_into_figure && self.images_per_figure_with(shots) > 9 {
            return Err(err("figure would exceed 9 images"));
        }
        self.shots_per_class = shots;
        Ok(self)
    }

    fn images_per_figure_with(&self, shots: usize) -> usize {
        let queries = if self.kind.figure_per_query() {
            1
        } else {
            self.queries_per_request
        };
        2 * shots + queries
    }

    pub fn example_count(&self) -> usize {
        2 * self.shots_per_class
    }

    /// Checks the kind-dependent invariants.
    pub fn validate(&self) -> Result<(), RenderError> {
        match (&self.reasoning_text, self.kind.uses_reasoning()) {
            (None, true) => return Err(RenderError::MissingReasoning { kind: self.kind }),
            (Some(t), true) if t.trim().is_empty() => {
                return Err(RenderError::MissingReasoning { kind: self.kind })
            }
            (Some(_), false) => return Err(RenderError::UnexpectedReasoning { kind: self.kind }),
            _ => {}
        }
        if self.queries_per_request != self.kind.queries_per_request()
            || self.combine_into_figure != self.kind.combine_into_figure()
        {
            return Err(RenderError::Figures {
                kind: self.kind,
                detail: "arity fields do not match the strategy kind".into(),
            });
        }
        Strategy::new(self.kind)
            .with_shots_per_class(self.shots_per_class)
            .map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub name: String,
    pub media_type: String,
    #[serde(skip)]
    pub data: Vec<u8>,
    pub digest: String,
    /// Prompt-visible index and item id of each image carried.
    pub contents: Vec<(usize, String)>,
}

impl Attachment {
    fn new(
        name: String,
        media_type: &str,
        data: Vec<u8>,
        contents: Vec<(usize, String)>,
    ) -> Self {
        Self {
            name,
            media_type: media_type.to_string(),
            digest: hex::encode(Sha256::digest(&data)),
            data,
            contents,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContentPart {
    Text(String),
    Image(Attachment),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<ContentPart>,
}

/// One query image as the prompt refers to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRef {
    /// Index the prompt uses for this image, e.g. 7 in "image 7".
    pub index: usize,
    /// 1-based figure group; always 1 unless each query has its own figure.
    pub group: usize,
    pub item_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPackage {
    pub strategy: StrategyKind,
    pub messages: Vec<Message>,
    pub query_index_map: Vec<QueryRef>,
}

impl PromptPackage {
    /// All text parts, joined by newlines.
    pub fn text(&self) -> String {
        self.messages
            .iter()
            .flat_map(|m| &m.parts)
            .filter_map(|p| match p {
                ContentPart::Text(t) => Some(t.as_str()),
                ContentPart::Image(_) => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn attachments(&self) -> impl Iterator<Item = &Attachment> {
        self.messages
            .iter()
            .flat_map(|m| &m.parts)
            .filter_map(|p| match p {
                ContentPart::Image(a) => Some(a),
                ContentPart::Text(_) => None,
            })
    }

    /// Attachments that carry `item_id`, with the index it is shown under.
    pub fn locate(&self, item_id: &str) -> Vec<(&Attachment, usize)> {
        self.attachments()
            .flat_map(|a| {
                a.contents
                    .iter()
                    .filter(move |(_, id)| id == item_id)
                    .map(move |(idx, _)| (a, *idx))
            })
            .collect()
    }
}

fn media_type_for(path: &std::path::Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "image/png",
    }
}

/// "image 7", "image 7 and image 8", "image 7, image 8 and image 9".
fn enumerate_images(word: &str, indices: &[usize]) -> String {
    let names: Vec<String> = indices.iter().map(|i| format!("{word} {i}")).collect();
    match names.as_slice() {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// "image 1" or "image 1-3".
fn image_range(start: usize, count: usize) -> String {
    if count <= 1 {
        format!("image {start}")
    } else {
        format!("image {start}-{}", start + count - 1)
    }
}

/// Single-pass `{name}` substitution; inserted values are never rescanned.
fn fill(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    'scan: while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        for (name, value) in vars {
            let token_len = name.len() + 2;
            if tail.len() >= token_len
                && tail.as_bytes()[token_len - 1] == b'}'
                && &tail[1..token_len - 1] == *name
            {
                out.push_str(value);
                rest = &tail[token_len..];
                continue 'scan;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

fn check_figure_sources(
    kind: StrategyKind,
    figure: &ComposedFigure,
    expected: &[&str],
) -> Result<(), RenderError> {
    let got: Vec<&str> = figure
        .placements
        .iter()
        .map(|p| p.source_id.as_str())
        .collect();
    if got != expected {
        return Err(RenderError::Figures {
            kind,
            detail: format!("figure holds {got:?}, expected {expected:?}"),
        });
    }
    Ok(())
}

/// Renders `strategy` for the given examples and queries.
///
/// `examples` must hold `shots_per_class` items of the task's first class
/// followed by as many of the second. A request may carry fewer queries than
/// the strategy's batch size (the final short group of a run). Combined
/// strategies need the pre-composed figures: one per query for the grouped
/// strategy, otherwise a single figure of examples followed by queries.
pub fn render_prompt(
    strategy: &Strategy,
    task: &Task,
    examples: &[LabeledImage],
    queries: &[LabeledImage],
    figures: Option<&[ComposedFigure]>,
) -> Result<PromptPackage, RenderError> {
    let kind = strategy.kind;
    strategy.validate()?;
    if examples.len() != strategy.example_count() {
        return Err(RenderError::ExampleArity {
            kind,
            expected: strategy.example_count(),
            got: examples.len(),
        });
    }
    if queries.is_empty() || queries.len() > strategy.queries_per_request {
        return Err(RenderError::QueryArity {
            kind,
            max: strategy.queries_per_request,
            got: queries.len(),
        });
    }
    let k = strategy.shots_per_class;
    let (head, tail) = examples.split_at(k);
    if !head.iter().all(|e| e.label == task.first) || !tail.iter().all(|e| e.label == task.second)
    {
        return Err(RenderError::ExampleOrder {
            first: task.first.to_string(),
            second: task.second.to_string(),
        });
    }

    let per_query_figure = kind.figure_per_query();
    let query_index_map: Vec<QueryRef> = queries
        .iter()
        .enumerate()
        .map(|(i, q)| QueryRef {
            index: if per_query_figure {
                examples.len() + 1
            } else {
                examples.len() + i + 1
            },
            group: if per_query_figure { i + 1 } else { 1 },
            item_id: q.id.clone(),
        })
        .collect();

    let example_ids: Vec<&str> = examples.iter().map(|e| e.id.as_str()).collect();
    let mut attachments = Vec::new();
    match (strategy.combine_into_figure, figures) {
        (false, None) => {
            for (i, item) in examples.iter().chain(queries).enumerate() {
                let data = std::fs::read(&item.path).map_err(|source| RenderError::Attachment {
                    id: item.id.clone(),
                    source,
                })?;
                attachments.push(Attachment::new(
                    item.id.clone(),
                    media_type_for(&item.path),
                    data,
                    vec![(i + 1, item.id.clone())],
                ));
            }
        }
        (true, Some(figs)) => {
            let groups: Vec<Vec<&LabeledImage>> = if per_query_figure {
                queries.iter().map(|q| vec![q]).collect()
            } else {
                vec![queries.iter().collect()]
            };
            if figs.len() != groups.len() {
                return Err(RenderError::Figures {
                    kind,
                    detail: format!("expected {} figure(s), got {}", groups.len(), figs.len()),
                });
            }
            for (g, (fig, group)) in figs.iter().zip(&groups).enumerate() {
                let mut expected = example_ids.clone();
                expected.extend(group.iter().map(|q| q.id.as_str()));
                check_figure_sources(kind, fig, &expected)?;
                attachments.push(Attachment::new(
                    format!("figure-{}", g + 1),
                    "image/png",
                    fig.encode_png()?,
                    fig.placements
                        .iter()
                        .map(|p| (p.index, p.source_id.clone()))
                        .collect(),
                ));
            }
        }
        (true, None) => {
            return Err(RenderError::Figures {
                kind,
                detail: "composed figures are required".into(),
            })
        }
        (false, Some(_)) => {
            return Err(RenderError::Figures {
                kind,
                detail: "strategy sends images separately; figures not accepted".into(),
            })
        }
    }

    let example_lines = examples
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let label = if i < k { &task.first } else { &task.second };
            format!("Image {}: {}", i + 1, label)
        })
        .collect::<Vec<_>>()
        .join("\n");
    let mut visible: Vec<usize> = query_index_map.iter().map(|q| q.index).collect();
    visible.dedup();
    let vars = [
        ("class1", task.first.to_string()),
        ("class2", task.second.to_string()),
        ("examples", example_lines),
        (
            "reasoning",
            strategy.reasoning_text.clone().unwrap_or_default(),
        ),
        ("class1_images", image_range(1, k)),
        ("class2_images", image_range(k + 1, k)),
        ("query_images", enumerate_images("image", &visible)),
        ("query_images_title", enumerate_images("Image", &visible)),
        ("group_count", queries.len().to_string()),
    ];
    let text = fill(template_text(kind), &vars).trim_end().to_string();

    let mut parts: Vec<ContentPart> = attachments.into_iter().map(ContentPart::Image).collect();
    parts.push(ContentPart::Text(text));
    Ok(PromptPackage {
        strategy: kind,
        messages: vec![Message {
            role: Role::User,
            parts,
        }],
        query_index_map,
    })
}
