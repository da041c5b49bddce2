//! Printed results table and a brute-force search for the confusion
//! matrices behind each row on a 26 COVID / 20 Normal test split.

use icl_bench::metrics::ConfusionMatrix;

pub const POSITIVES: u64 = 26;
pub const NEGATIVES: u64 = 20;

/// Printed cells in hundredths: COVID P, R, F1, Normal P, R, F1, accuracy.
pub const ROWS: [(&str, [u64; 7]); 11] = [
    ("Naive", [83, 77, 80, 73, 80, 76, 78]),
    ("ICL1", [76, 73, 75, 67, 70, 68, 72]),
    ("ICL2", [100, 62, 76, 66, 100, 80, 78]),
    ("ICL3", [90, 69, 78, 69, 90, 78, 83]),
    ("ICL4", [95, 77, 85, 76, 95, 84, 85]),
    ("ICL-R1", [67, 80, 73, 82, 69, 75, 74]),
    ("ICL-R2", [83, 75, 79, 82, 88, 85, 83]),
    ("RN-18 full", [92, 96, 94, 95, 90, 92, 93]),
    ("RN-18 6-shot", [85, 65, 74, 65, 85, 74, 74]),
    ("VGG16 full", [100, 92, 96, 91, 100, 95, 96]),
    ("VGG16 6-shot", [100, 65, 79, 69, 100, 81, 80]),
];

/// Rows with no integer matrix on this split that reproduces them.
pub const INCONSISTENT: [&str; 3] = ["ICL3", "ICL-R1", "ICL-R2"];

/// Cells printed one hundredth below the half-up value (row, column).
pub const TRUNCATED_CELLS: [(&str, usize); 3] =
    [("ICL2", 3), ("RN-18 full", 0), ("VGG16 6-shot", 5)];

/// Nearest hundredth to `num/den`, ties upward, found by scanning every
/// candidate. An empty denominator counts as zero.
fn half_up(num: u64, den: u64) -> u64 {
    if den == 0 {
        return 0;
    }
    let dist = |h: u64| (100 * num).abs_diff(h * den);
    (0..=100).fold(0, |best, h| if dist(h) <= dist(best) { h } else { best })
}

/// Largest hundredth not above `num/den`.
fn truncated(num: u64, den: u64) -> u64 {
    if den == 0 {
        return 0;
    }
    (0..=100).filter(|h| h * den <= 100 * num).max().unwrap()
}

/// The seven cells for `m`, computed by plain integer arithmetic.
pub fn cells(m: &ConfusionMatrix, round: fn(u64, u64) -> u64) -> [u64; 7] {
    let (tp, fp, fn_, tn) = (m.true_pos, m.false_pos, m.false_neg, m.true_neg);
    [
        round(tp, tp + fp),
        round(tp, tp + fn_),
        round(2 * tp, 2 * tp + fp + fn_),
        round(tn, tn + fn_),
        round(tn, tn + fp),
        round(2 * tn, 2 * tn + fn_ + fp),
        round(tp + tn, tp + fp + fn_ + tn),
    ]
}

pub fn half_up_cells(m: &ConfusionMatrix) -> [u64; 7] {
    cells(m, half_up)
}

pub fn truncated_cells(m: &ConfusionMatrix) -> [u64; 7] {
    cells(m, truncated)
}

/// Every matrix on the split.
pub fn all_matrices() -> impl Iterator<Item = ConfusionMatrix> {
    (0..=POSITIVES).flat_map(|tp| {
        (0..=NEGATIVES).map(move |fp| ConfusionMatrix::new(tp, fp, POSITIVES - tp, NEGATIVES - fp))
    })
}

/// Matrices whose half-up cells equal `printed`, ignoring the columns in `skip`.
pub fn solve(printed: &[u64; 7], skip: &[usize]) -> Vec<ConfusionMatrix> {
    all_matrices()
        .filter(|m| {
            let got = half_up_cells(m);
            (0..7).all(|i| skip.contains(&i) || got[i] == printed[i])
        })
        .collect()
}

pub fn truncated_columns(row: &str) -> Vec<usize> {
    TRUNCATED_CELLS
        .iter()
        .filter(|(r, _)| *r == row)
        .map(|(_, c)| *c)
        .collect()
}
