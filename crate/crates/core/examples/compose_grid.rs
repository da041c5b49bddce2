//! Composes a 3x3 captioned figure from six examples and three queries and
//! writes it to `grid.png` (or the path given as the first argument).
//!
//! cargo run --example compose_grid [OUT_PNG]

#[path = "support/mod.rs"]
mod support;

use icl_bench::composer::{compose_grid, default_layout, GridLayout, GridSource};
use icl_bench::dataset::{load_dataset, stratified_sample, Split};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "grid.png".into());
    let scratch = tempfile::tempdir()?;
    let root = support::synthetic_dataset(&scratch.path().join("data"), [10, 10], [3, 3]);
    let dataset = load_dataset(root)?;

    let shots = stratified_sample(&dataset, Split::Train, 3, 42)?;
    let queries: Vec<_> = dataset.split(Split::Test).take(3).collect();
    let sources: Vec<GridSource> = shots
        .iter()
        .chain(queries.iter().copied())
        .map(GridSource::from)
        .collect();

    let layout = GridLayout {
        cell_width: 128,
        cell_height: 128,
        ..default_layout(sources.len())?
    };
    let figure = compose_grid(&sources, &layout)?;
    std::fs::write(&out, figure.encode_png()?)?;

    println!("{}x{} canvas -> {out}", figure.image.width(), figure.image.height());
    for (p, a) in figure.placements.iter().zip(&figure.annotations) {
        println!("{:>8}  cell {:?}  {}", a.caption, p.cell, p.source_id);
    }
    println!("sha256 {}", figure.digest()?);
    Ok(())
}
