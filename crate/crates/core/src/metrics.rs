//! Binary confusion matrix and per-class precision, recall, F1 and accuracy.
//!
//! Every metric is kept as an exact integer fraction so that the two-decimal
//! table view rounds half-up without floating-point drift.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, Task};
use crate::parser::{Prediction, PredictionStatus};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("prediction for unknown item `{0}`")]
    UnknownItem(String),
    #[error("class `{0}` is not part of the task")]
    UnknownClass(String),
    #[error("confusion matrix is empty")]
    Degenerate,
}

/// What to do with predictions that are not `parsed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbstentionPolicy {
    /// Score as a misclassification of the item's true class.
    #[default]
    CountAsError,
    /// Drop from the matrix and count under `excluded`.
    Exclude,
}

/// Counts relative to a designated positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    #[serde(rename = "tp")]
    pub true_pos: u64,
    #[serde(rename = "fp")]
    pub false_pos: u64,
    #[serde(rename = "fn")]
    pub false_neg: u64,
    #[serde(rename = "tn")]
    pub true_neg: u64,
}

impl ConfusionMatrix {
    pub fn new(true_pos: u64, false_pos: u64, false_neg: u64, true_neg: u64) -> Self {
        Self {
            true_pos,
            false_pos,
            false_neg,
            true_neg,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    /// The same counts seen from the other class.
    pub fn swapped(&self) -> Self {
        Self::new(self.true_neg, self.false_neg, self.false_pos, self.true_pos)
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tp={} fp={} fn={} tn={}",
            self.true_pos, self.false_pos, self.false_neg, self.true_neg
        )
    }
}

/// Non-negative rational. `0/0` reads as zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn new(num: u64, den: u64) -> Self {
        Self { num, den }
    }

    pub fn value(&self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }

    /// Value in hundredths, rounded half-up.
    pub fn hundredths(&self) -> u64 {
        if self.den == 0 {
            0
        } else {
            (200 * self.num + self.den) / (2 * self.den)
        }
    }

    /// Value in hundredths, truncated.
    pub fn hundredths_truncated(&self) -> u64 {
        (100 * self.num).checked_div(self.den).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub exact: ExactMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactMetrics {
    pub precision: Fraction,
    pub recall: Fraction,
    pub f1: Fraction,
}

impl ClassMetrics {
    fn from_matrix(class: &ClassLabel, m: &ConfusionMatrix) -> Self {
        let exact = ExactMetrics {
            precision: Fraction::new(m.true_pos, m.true_pos + m.false_pos),
            recall: Fraction::new(m.true_pos, m.true_pos + m.false_neg),
            // Harmonic mean of P and R, reduced: 2tp / (2tp + fp + fn).
            f1: Fraction::new(2 * m.true_pos, 2 * m.true_pos + m.false_pos + m.false_neg),
        };
        Self {
            class: class.to_string(),
            precision: exact.precision.value(),
            recall: exact.recall.value(),
            f1: exact.f1.value(),
            exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub positive: ClassMetrics,
    pub negative: ClassMetrics,
    pub accuracy: f64,
    pub exact_accuracy: Fraction,
    pub matrix: ConfusionMatrix,
    pub scored: u64,
    pub excluded: u64,
}

/// Two-decimal view of a report, as printed in result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundedRow {
    /// Hundredths: positive P, R, F1, negative P, R, F1, accuracy.
    pub cells: [u64; 7],
}

impl RoundedRow {
    pub const COLUMNS: [&'static str; 7] = [
        "pos_precision",
        "pos_recall",
        "pos_f1",
        "neg_precision",
        "neg_recall",
        "neg_f1",
        "accuracy",
    ];
}

impl fmt::Display for RoundedRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells: Vec<String> = self
            .cells
            .iter()
            .map(|c| format!("{}.{:02}", c / 100, c % 100))
            .collect();
        f.write_str(&cells.join(" "))
    }
}

impl MetricsReport {
    fn exact_cells(&self) -> [Fraction; 7] {
        [
            self.positive.exact.precision,
            self.positive.exact.recall,
            self.positive.exact.f1,
            self.negative.exact.precision,
            self.negative.exact.recall,
            self.negative.exact.f1,
            self.exact_accuracy,
        ]
    }

    /// Half-up rounded to two decimals.
    pub fn rounded(&self) -> RoundedRow {
        RoundedRow {
            cells: self.exact_cells().map(|f| f.hundredths()),
        }
    }

    /// Truncated to two decimals.
    pub fn truncated(&self) -> RoundedRow {
        RoundedRow {
            cells: self.exact_cells().map(|f| f.hundredths_truncated()),
        }
    }
}

/// Result of tallying predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub matrix: ConfusionMatrix,
    pub excluded: u64,
}

/// Tallies predictions against ground truth with `positive` as the positive
/// class.
pub fn confusion(
    predictions: &[Prediction],
    truths: &HashMap<String, ClassLabel>,
    task: &Task,
    positive: &ClassLabel,
    policy: AbstentionPolicy,
) -> Result<Tally, MetricsError> {
    if task.resolve(positive.name()).is_none() {
        return Err(MetricsError::UnknownClass(positive.to_string()));
    }
    let mut tally = Tally {
        matrix: ConfusionMatrix::default(),
        excluded: 0,
    };
    for p in predictions {
        let truth = truths
            .get(&p.item_id)
            .ok_or_else(|| MetricsError::UnknownItem(p.item_id.clone()))?;
        let truly_positive = truth == positive;
        let predicted_positive = match (p.status, &p.predicted) {
            (PredictionStatus::Parsed, Some(label)) => *label == *positive,
            _ => match policy {
                AbstentionPolicy::Exclude => {
                    tally.excluded += 1;
                    continue;
                }
                AbstentionPolicy::CountAsError => !truly_positive,
            },
        };
        let m = &mut tally.matrix;
        match (truly_positive, predicted_positive) {
            (true, true) => m.true_pos += 1,
            (false, true) => m.false_pos += 1,
            (true, false) => m.false_neg += 1,
            (false, false) => m.true_neg += 1,
        }
    }
    Ok(tally)
}

/// Per-class metrics and accuracy for `matrix`, positive class first.
pub fn report(
    matrix: &ConfusionMatrix,
    task: &Task,
    positive: &ClassLabel,
) -> Result<MetricsReport, MetricsError> {
    report_with_excluded(matrix, task, positive, 0)
}

pub fn report_tally(
    tally: &Tally,
    task: &Task,
    positive: &ClassLabel,
) -> Result<MetricsReport, MetricsError> {
    report_with_excluded(&tally.matrix, task, positive, tally.excluded)
}

fn report_with_excluded(
    matrix: &ConfusionMatrix,
    task: &Task,
    positive: &ClassLabel,
    excluded: u64,
) -> Result<MetricsReport, MetricsError> {
    let positive = task
        .resolve(positive.name())
        .ok_or_else(|| MetricsError::UnknownClass(positive.to_string()))?;
    if matrix.total() == 0 {
        return Err(MetricsError::Degenerate);
    }
    let exact_accuracy = Fraction::new(matrix.true_pos + matrix.true_neg, matrix.total());
    Ok(MetricsReport {
        positive: ClassMetrics::from_matrix(positive, matrix),
        negative: ClassMetrics::from_matrix(task.other(positive), &matrix.swapped()),
        accuracy: exact_accuracy.value(),
        exact_accuracy,
        matrix: *matrix,
        scored: matrix.total(),
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn task() -> Task {
        Task::new(
            ClassLabel::new("COVID").unwrap(),
            ClassLabel::new("Normal").unwrap(),
        )
        .unwrap()
    }

    fn row(tp: u64, fp: u64, fneg: u64, tn: u64) -> String {
        let t = task();
        report(&ConfusionMatrix::new(tp, fp, fneg, tn), &t, &t.first)
            .unwrap()
            .rounded()
            .to_string()
    }

    #[test]
    fn naive_row() {
        assert_eq!(row(20, 4, 6, 16), "0.83 0.77 0.80 0.73 0.80 0.76 0.78");
    }

    #[test]
    fn icl2_row_rounds_normal_precision_up() {
        assert_eq!(row(16, 0, 10, 20), "1.00 0.62 0.76 0.67 1.00 0.80 0.78");
    }

    #[test]
    fn icl4_row() {
        assert_eq!(row(20, 1, 6, 19), "0.95 0.77 0.85 0.76 0.95 0.84 0.85");
    }

    #[test]
    fn single_class_truth() {
        assert_eq!(row(0, 0, 0, 46), "0.00 0.00 0.00 1.00 1.00 1.00 1.00");
    }

    #[test]
    fn empty_matrix_is_degenerate() {
        let t = task();
        assert!(matches!(
            report(&ConfusionMatrix::default(), &t, &t.first),
            Err(MetricsError::Degenerate)
        ));
    }

    #[test]
    fn half_up_rounding_is_exact() {
        assert_eq!(Fraction::new(1, 8).hundredths(), 13);
        assert_eq!(Fraction::new(33, 40).hundredths(), 83);
        assert_eq!(Fraction::new(2, 3).hundredths(), 67);
        assert_eq!(Fraction::new(2, 3).hundredths_truncated(), 66);
        assert_eq!(Fraction::new(0, 0).hundredths(), 0);
    }

    fn pred(id: &str, label: Option<&str>, status: PredictionStatus) -> Prediction {
        Prediction {
            item_id: id.into(),
            index: 1,
            predicted: label.map(|l| ClassLabel::new(l).unwrap()),
            status,
            explanation: String::new(),
            matched_line: None,
        }
    }

    #[test]
    fn abstentions_follow_policy() {
        let t = task();
        let truths: HashMap<_, _> = [
            ("a".to_string(), t.first.clone()),
            ("b".to_string(), t.second.clone()),
        ]
        .into();
        let preds = [
            pred("a", None, PredictionStatus::Abstained),
            pred("b", None, PredictionStatus::Unparseable),
        ];
        let counted =
            confusion(&preds, &truths, &t, &t.first, AbstentionPolicy::CountAsError).unwrap();
        assert_eq!(counted.matrix, ConfusionMatrix::new(0, 1, 1, 0));
        let excluded = confusion(&preds, &truths, &t, &t.first, AbstentionPolicy::Exclude).unwrap();
        assert_eq!(excluded.matrix.total(), 0);
        assert_eq!(excluded.excluded, 2);
    }

    #[test]
    fn unknown_item_is_an_error() {
        let t = task();
        let err = confusion(
            &[pred("zz", Some("COVID"), PredictionStatus::Parsed)],
            &HashMap::new(),
            &t,
            &t.first,
            AbstentionPolicy::CountAsError,
        );
        assert!(matches!(err, Err(MetricsError::UnknownItem(id)) if id == "zz"));
    }

    proptest! {
        #[test]
        fn swap_exchanges_class_blocks(tp in 0u64..60, fp in 0u64..60, fneg in 0u64..60, tn in 0u64..60) {
            prop_assume!(tp + fp + fneg + tn > 0);
            let t = task();
            let m = ConfusionMatrix::new(tp, fp, fneg, tn);
            let a = report(&m, &t, &t.first).unwrap();
            let b = report(&m.swapped(), &t, &t.second).unwrap();
            prop_assert_eq!(&a.positive, &b.negative);
            prop_assert_eq!(&a.negative, &b.positive);
            prop_assert_eq!(a.exact_accuracy, b.exact_accuracy);
            prop_assert_eq!(m.swapped().swapped(), m);
        }

        #[test]
        fn accuracy_between_recalls(tp in 0u64..60, fp in 0u64..60, fneg in 0u64..60, tn in 0u64..60) {
            // Both classes present, so accuracy is a weighted mean of the recalls.
            prop_assume!(tp + fneg > 0 && fp + tn > 0);
            let t = task();
            let r = report(&ConfusionMatrix::new(tp, fp, fneg, tn), &t, &t.first).unwrap();
            let lo = r.positive.recall.min(r.negative.recall);
            let hi = r.positive.recall.max(r.negative.recall);
            prop_assert!(lo - 1e-12 <= r.accuracy && r.accuracy <= hi + 1e-12);
        }

        #[test]
        fn f1_is_harmonic_mean(tp in 0u64..60, fp in 0u64..60, fneg in 0u64..60, tn in 0u64..60) {
            prop_assume!(tp + fp + fneg + tn > 0);
            let t = task();
            let r = report(&ConfusionMatrix::new(tp, fp, fneg, tn), &t, &t.first).unwrap();
            for c in [&r.positive, &r.negative] {
                let expected = if c.precision + c.recall == 0.0 {
                    0.0
                } else {
                    2.0 * c.precision * c.recall / (c.precision + c.recall)
                };
                prop_assert!((c.f1 - expected).abs() < 1e-12);
            }
        }
    }
}
