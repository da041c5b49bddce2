//! Renders every prompt strategy for one request and prints the text and
//! attachment layout that would be sent.
//!
//! cargo run --example render_prompts

#[path = "support/mod.rs"]
mod support;

use icl_bench::composer::{compose_grid, default_layout, GridLayout, GridSource};
use icl_bench::dataset::{load_dataset, stratified_sample, LabeledImage, Split};
use icl_bench::prompts::{render_prompt, Strategy, StrategyKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scratch = tempfile::tempdir()?;
    let root = support::synthetic_dataset(&scratch.path().join("data"), [6, 6], [3, 3]);
    let dataset = load_dataset(root)?;
    let tests: Vec<LabeledImage> = dataset.split(Split::Test).cloned().collect();

    for kind in StrategyKind::ALL {
        let strategy = Strategy::new(kind);
        let shots = stratified_sample(&dataset, Split::Train, strategy.shots_per_class, 7)?;
        let queries = &tests[..strategy.queries_per_request];

        let figures = if kind.combine_into_figure() {
            let groups: Vec<Vec<&LabeledImage>> = if kind.figure_per_query() {
                queries.iter().map(|q| vec![q]).collect()
            } else {
                vec![queries.iter().collect()]
            };
            let mut figs = Vec::new();
            for group in groups {
                let sources: Vec<GridSource> =
                    shots.iter().chain(group).map(GridSource::from).collect();
                let layout = GridLayout {
                    cell_width: 64,
                    cell_height: 64,
                    ..default_layout(sources.len())?
                };
                figs.push(compose_grid(&sources, &layout)?);
            }
            Some(figs)
        } else {
            None
        };

        let package = render_prompt(&strategy, dataset.task(), &shots, queries, figures.as_deref())?;
        println!("==== {kind} ====");
        for a in package.attachments() {
            let carried: Vec<String> = a.contents.iter().map(|(i, id)| format!("{i}={id}")).collect();
            println!("[attachment {}: {}]", a.name, carried.join(" "));
        }
        println!("{}", package.text());
        let map: Vec<String> = package
            .query_index_map
            .iter()
            .map(|q| format!("image {} (group {}) -> {}", q.index, q.group, q.item_id))
            .collect();
        println!("queries: {}\n", map.join("; "));
    }
    Ok(())
}
