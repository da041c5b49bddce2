//! Parser fixture corpus and a regex reference matcher written from the
//! matching rules rather than from the parser code.

use std::fs;
use std::path::{Path, PathBuf};

use regex::Regex;

use icl_bench::dataset::{ClassLabel, Task};
use icl_bench::parser::{parse_labels, Prediction, PredictionStatus, Synonyms};

pub const MIN_FIXTURES: usize = 30;

pub fn task() -> Task {
    Task::new(ClassLabel::new("COVID").unwrap(), ClassLabel::new("Normal").unwrap()).unwrap()
}

pub struct Fixture {
    pub name: String,
    pub raw: String,
    /// `(prompt index, expected label or status)`.
    pub expected: Vec<(usize, String)>,
}

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/parser")
}

pub fn load_fixtures() -> Vec<Fixture> {
    let mut names: Vec<PathBuf> = fs::read_dir(fixture_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|path| {
            let expect = fs::read_to_string(path.with_extension("expect")).unwrap();
            Fixture {
                name: path.file_stem().unwrap().to_string_lossy().into_owned(),
                raw: fs::read_to_string(&path).unwrap(),
                expected: expect
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| {
                        let (i, v) = l.split_once(' ').unwrap();
                        (i.parse().unwrap(), v.trim().to_string())
                    })
                    .collect(),
            }
        })
        .collect()
}

pub fn outcome(p: &Prediction) -> String {
    match p.status {
        PredictionStatus::Parsed => p.predicted.as_ref().unwrap().name().to_string(),
        other => other.as_str().to_string(),
    }
}

pub fn run_parser(f: &Fixture) -> Vec<Prediction> {
    let t = task();
    let expected: Vec<(usize, String)> = f
        .expected
        .iter()
        .enumerate()
        .map(|(n, (i, _))| (*i, format!("item{n}")))
        .collect();
    parse_labels(&f.raw, &expected, &t, &Synonyms::default_for(&t))
}

pub struct Reference {
    image: Regex,
    classes: Vec<(String, Regex)>,
    leading: Vec<(String, Regex)>,
    strip: Regex,
    refusal: Regex,
}

impl Reference {
    pub fn new() -> Self {
        let terms = [
            ("COVID", r"covid-19|covid|positive"),
            ("Normal", r"normal|healthy|negative"),
        ];
        Self {
            image: Regex::new(r"(?i)\bimage[ #]*(\d+)\b").unwrap(),
            classes: terms
                .iter()
                .map(|(c, t)| (c.to_string(), Regex::new(&format!(r"(?i)\b({t})\b")).unwrap()))
                .collect(),
            leading: terms
                .iter()
                .map(|(c, t)| (c.to_string(), Regex::new(&format!(r"(?i)^({t})\b")).unwrap()))
                .collect(),
            strip: Regex::new(
                r"(?i)^[\s*#_`>:-]*(?:(?:label|classification|prediction|answer|class|result)[*_ ]*(?::[\s*#_`>:-]*|\s*$))?",
            )
            .unwrap(),
            refusal: Regex::new(
                r"(?i)i cannot|i can't|i can not|unable to|not able to|i'm sorry|i am sorry|cannot provide|cannot determine|not possible to|consult a|as an ai",
            )
            .unwrap(),
        }
    }

    fn classes_in(&self, text: &str) -> Vec<String> {
        let lower = text.to_lowercase();
        self.classes
            .iter()
            .filter(|(_, re)| {
                re.find_iter(text).any(|m| {
                    let before = &lower[..m.start()];
                    !["non-", "non ", "not ", "no "].iter().any(|n| before.ends_with(n))
                })
            })
            .map(|(c, _)| c.clone())
            .collect()
    }

    pub fn classify(&self, raw: &str, indices: &[usize]) -> Vec<String> {
        let lines: Vec<&str> = raw.lines().collect();
        let mut segments: Vec<(usize, usize, String, bool)> = Vec::new();
        for (li, line) in lines.iter().enumerate() {
            let hits: Vec<_> = self.image.captures_iter(line).collect();
            for (k, c) in hits.iter().enumerate() {
                let end = hits.get(k + 1).map_or(line.len(), |n| n.get(0).unwrap().start());
                let text = line[c.get(0).unwrap().end()..end].to_string();
                segments.push((li, c[1].parse().unwrap(), text, false));
            }
        }
        let mut used_lines = vec![false; lines.len()];
        let mut out = Vec::new();
        for &index in indices {
            let mut result = None;
            for seg in segments.iter_mut() {
                if seg.1 != index || seg.3 {
                    continue;
                }
                let found = self.classes_in(&seg.2);
                if found.is_empty() {
                    continue;
                }
                seg.3 = true;
                used_lines[seg.0] = true;
                result = Some(if found.len() > 1 { "ambiguous".into() } else { found[0].clone() });
                break;
            }
            if result.is_none() && indices.len() == 1 {
                let first = lines.iter().enumerate().find(|(li, l)| {
                    !used_lines[*li] && !self.strip.replace(l, "").trim().is_empty()
                });
                if let Some((_, line)) = first {
                    let rest = self.strip.replace(line, "");
                    let lead: Vec<_> = self.leading.iter().filter(|(_, re)| re.is_match(&rest)).collect();
                    if !lead.is_empty() {
                        result = Some(if self.classes_in(line).len() > 1 {
                            "ambiguous".into()
                        } else {
                            lead[0].0.clone()
                        });
                    }
                }
            }
            out.push(result.unwrap_or_else(|| {
                if self.refusal.is_match(&raw.replace('\u{2019}', "'")) {
                    "abstained".into()
                } else {
                    "unparseable".into()
                }
            }));
        }
        out
    }
}


/// Fixture names whose parser output differs from the annotation.
pub fn annotation_failures() -> Vec<String> {
    load_fixtures()
        .iter()
        .filter_map(|f| {
            let got: Vec<String> = run_parser(f).iter().map(outcome).collect();
            let want: Vec<String> = f.expected.iter().map(|(_, v)| v.clone()).collect();
            (got != want).then(|| format!("{}: got {got:?}, want {want:?}", f.name))
        })
        .collect()
}

/// Soundness violations: a parsed prediction whose matched line is not in
/// the response or does not name the predicted class.
pub fn soundness_failures() -> Vec<String> {
    let t = task();
    let synonyms = Synonyms::default_for(&t);
    let mut failures = Vec::new();
    for f in load_fixtures() {
        for p in run_parser(&f) {
            if p.status != PredictionStatus::Parsed {
                if p.predicted.is_some() {
                    failures.push(format!("{}: label without parsed status", f.name));
                }
                continue;
            }
            let line = p.matched_line.as_deref().unwrap_or_default();
            let lower = line.to_lowercase();
            let label = p.predicted.unwrap();
            if !f.raw.contains(line)
                || !synonyms.terms_for(&label).iter().any(|t| lower.contains(t.as_str()))
            {
                failures.push(format!("{}: {line:?} for {label}", f.name));
            }
        }
    }
    failures
}
