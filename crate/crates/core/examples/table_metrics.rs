//! Prints per-class metrics for confusion matrices on a 26 COVID / 20
//! Normal test split, both half-up rounded and truncated.
//!
//! cargo run --example table_metrics

use icl_bench::dataset::{ClassLabel, Task};
use icl_bench::metrics::{report, ConfusionMatrix, RoundedRow};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let covid = ClassLabel::new("COVID").unwrap();
    let task = Task::new(covid.clone(), ClassLabel::new("Normal").unwrap()).unwrap();
    let rows = [
        ("Naive", ConfusionMatrix::new(20, 4, 6, 16)),
        ("ICL1", ConfusionMatrix::new(19, 6, 7, 14)),
        ("ICL2", ConfusionMatrix::new(16, 0, 10, 20)),
        ("ICL4", ConfusionMatrix::new(20, 1, 6, 19)),
        ("RN-18 full", ConfusionMatrix::new(25, 2, 1, 18)),
        ("RN-18 6-shot", ConfusionMatrix::new(17, 3, 9, 17)),
        ("VGG16 full", ConfusionMatrix::new(24, 0, 2, 20)),
        ("VGG16 6-shot", ConfusionMatrix::new(17, 0, 9, 20)),
    ];
    println!("{:<13} {:<28} {}", "row", "matrix", RoundedRow::COLUMNS.join(" "));
    for (name, matrix) in rows {
        let r = report(&matrix, &task, &covid)?;
        println!("{name:<13} {:<28} half-up   {}", matrix.to_string(), r.rounded());
        if r.truncated() != r.rounded() {
            println!("{:<13} {:<28} truncated {}", "", "", r.truncated());
        }
    }
    Ok(())
}
