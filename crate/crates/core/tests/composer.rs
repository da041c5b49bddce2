mod common;

use icl_bench::composer::{compose_grid, default_layout, ComposeError, GridLayout, GridSource};
use image::{Rgb, RgbImage};

use common::geometry::{check_random_case, solid_color_probe};

const RGB: [[u8; 3]; 3] = [[255, 0, 0], [0, 255, 0], [0, 0, 255]];

#[test]
fn random_layouts_hold_geometry() {
    for seed in 0..100 {
        check_random_case(seed).unwrap_or_else(|e| panic!("case {seed}: {e}"));
    }
}

#[test]
fn bare_single_cell_matches_cell_size() {
    let layout = GridLayout {
        rows: 1,
        cols: 1,
        cell_width: 37,
        cell_height: 21,
        padding: 0,
        annotation_band_height: 0,
        background: [0, 0, 0],
    };
    let source = GridSource::Bitmap { id: "a".into(), image: RgbImage::new(5, 5) };
    let figure = compose_grid(&[source], &layout).unwrap();
    assert_eq!(figure.image.dimensions(), (37, 21));
}

#[test]
fn solid_colors_survive_in_a_row() {
    let layout = GridLayout { cell_width: 64, cell_height: 64, ..default_layout(3).unwrap() };
    let (worst, centres) = solid_color_probe(&layout, &RGB, &[(20, 20), (50, 30), (7, 90)]);
    assert!(worst <= 1, "deviation {worst}");
    assert!(centres);
}

#[test]
fn solid_colors_survive_in_a_full_grid() {
    let layout = GridLayout { cell_width: 40, cell_height: 30, ..default_layout(9).unwrap() };
    let colors: Vec<[u8; 3]> = (0..9u8).map(|i| [i * 28, 255 - i * 20, 100 + i * 9]).collect();
    let sizes: Vec<(u32, u32)> = (0..9).map(|i| (3 + i * 11, 60 - i * 5)).collect();
    let (worst, _) = solid_color_probe(&layout, &colors, &sizes);
    assert!(worst <= 1, "deviation {worst}");
}

#[test]
fn captions_are_drawn_in_bands() {
    let layout = GridLayout { cell_width: 96, cell_height: 96, ..default_layout(2).unwrap() };
    let sources: Vec<GridSource> = (0..2)
        .map(|i| GridSource::Bitmap { id: format!("s{i}"), image: RgbImage::from_pixel(4, 4, Rgb([200, 0, 0])) })
        .collect();
    let figure = compose_grid(&sources, &layout).unwrap();
    for p in &figure.placements {
        let band = layout.band_rect(p.index);
        let dark = (band.y..band.bottom())
            .flat_map(|y| (band.x..band.right()).map(move |x| (x, y)))
            .filter(|&(x, y)| figure.image.get_pixel(x, y).0 == [0, 0, 0])
            .count();
        assert!(dark > 0, "no caption ink for image {}", p.index);
    }
}

#[test]
fn default_layouts() {
    assert_eq!((default_layout(1).unwrap().rows, default_layout(1).unwrap().cols), (1, 1));
    assert_eq!((default_layout(3).unwrap().rows, default_layout(3).unwrap().cols), (1, 3));
    assert_eq!((default_layout(9).unwrap().rows, default_layout(9).unwrap().cols), (3, 3));
    assert_eq!((default_layout(7).unwrap().rows, default_layout(7).unwrap().cols), (3, 3));
    assert!(matches!(default_layout(10), Err(ComposeError::UnsupportedLayout(10))));
    assert!(matches!(default_layout(0), Err(ComposeError::Empty)));
}

#[test]
fn too_many_sources_is_a_capacity_error() {
    let layout = default_layout(2).unwrap();
    let sources: Vec<GridSource> = (0..3)
        .map(|i| GridSource::Bitmap { id: format!("s{i}"), image: RgbImage::new(2, 2) })
        .collect();
    assert!(matches!(compose_grid(&sources, &layout), Err(ComposeError::Capacity { .. })));
}

#[test]
fn undecodable_file_names_the_source() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.png");
    std::fs::write(&path, b"not a png").unwrap();
    let err = compose_grid(
        &[GridSource::File { id: "train/COVID/broken.png".into(), path }],
        &default_layout(1).unwrap(),
    )
    .unwrap_err();
    assert!(matches!(err, ComposeError::Decode { ref id, .. } if id == "train/COVID/broken.png"));
}

#[test]
fn file_sources_compose_identically_twice() {
    let (_tmp, root) = common::dataset_dir();
    let files: Vec<GridSource> = ["COVID/img000.png", "COVID/img001.png", "Normal/img000.png"]
        .iter()
        .map(|f| GridSource::File { id: f.to_string(), path: root.join("test").join(f) })
        .collect();
    let layout = GridLayout { cell_width: 48, cell_height: 48, ..default_layout(3).unwrap() };
    let a = compose_grid(&files, &layout).unwrap().encode_png().unwrap();
    let b = compose_grid(&files, &layout).unwrap().encode_png().unwrap();
    assert_eq!(a, b);
}
