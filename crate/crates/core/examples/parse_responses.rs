//! Extracts labels from a handful of typical model replies.
//!
//! cargo run --example parse_responses

use icl_bench::dataset::{ClassLabel, Task};
use icl_bench::parser::{parse_labels, Synonyms};

fn main() {
    let task = Task::new(
        ClassLabel::new("COVID").unwrap(),
        ClassLabel::new("Normal").unwrap(),
    )
    .unwrap();
    let synonyms = Synonyms::default_for(&task);
    let one = vec![(1, "test/COVID/a.png".to_string())];
    let three: Vec<(usize, String)> = (7..=9).map(|i| (i, format!("query-{i}"))).collect();

    let replies: [(&str, &[(usize, String)]); 5] = [
        ("COVID\nBilateral peripheral opacities.", &one),
        ("**Label:** Healthy\nThe lung fields are clear.", &one),
        ("I'm sorry, I can't help with medical diagnosis.", &one),
        (
            "1. **Image 7**: Normal\n2. **Image 8**: COVID\n3. **Image 9**: COVID or Normal\nExplanation follows.",
            &three,
        ),
        ("Images 7-9 all look Normal.", &three),
    ];
    for (raw, expected) in replies {
        println!("--- reply ---\n{raw}");
        for p in parse_labels(raw, expected, &task, &synonyms) {
            let label = p.predicted.map(|l| l.to_string()).unwrap_or_else(|| "-".into());
            println!(
                "  image {:<2} {:<11} {:<7} line={:?}",
                p.index,
                p.status.as_str(),
                label,
                p.matched_line.unwrap_or_default()
            );
        }
    }
}
