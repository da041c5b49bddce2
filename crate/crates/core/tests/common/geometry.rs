//! Brute-force checks for composed figures.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use icl_bench::composer::{compose_grid, GridLayout, GridSource, Rect};

fn contains(r: &Rect, x: u32, y: u32) -> bool {
    x >= r.x && x < r.x + r.width && y >= r.y && y < r.y + r.height
}

/// Cell `index` (1-based, row-major), computed from first principles.
fn expected_cell(l: &GridLayout, index: usize) -> Rect {
    let slot = (index - 1) as u32;
    let (row, col) = (slot / l.cols, slot % l.cols);
    let mut x = l.padding;
    for _ in 0..col {
        x += l.cell_width + l.padding;
    }
    let mut y = l.padding;
    for _ in 0..row {
        y += l.cell_height + l.annotation_band_height + l.padding;
    }
    Rect { x, y, width: l.cell_width, height: l.cell_height }
}

pub fn random_layout(rng: &mut ChaCha8Rng) -> GridLayout {
    GridLayout {
        rows: rng.random_range(1..=4),
        cols: rng.random_range(1..=4),
        cell_width: rng.random_range(1..=40),
        cell_height: rng.random_range(1..=40),
        padding: rng.random_range(0..=6),
        annotation_band_height: rng.random_range(0..=14),
        background: [rng.random(), rng.random(), rng.random()],
    }
}

fn random_sources(rng: &mut ChaCha8Rng, n: usize) -> Vec<GridSource> {
    (0..n)
        .map(|i| {
            let (w, h) = (rng.random_range(1..=60), rng.random_range(1..=60));
            let seed: u32 = rng.random();
            let image = RgbImage::from_fn(w, h, |x, y| {
                let v = seed ^ (x * 7919 + y * 104_729);
                Rgb([v as u8, (v >> 8) as u8, (v >> 16) as u8])
            });
            GridSource::Bitmap { id: format!("src{i}"), image }
        })
        .collect()
}

/// Composes a random layout and checks geometry, containment, disjointness,
/// untouched background and byte determinism. Returns a description of the
/// first violation.
pub fn check_random_case(case_seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
    let layout = random_layout(&mut rng);
    let capacity = (layout.rows * layout.cols) as usize;
    let n = rng.random_range(1..=capacity);
    let sources = random_sources(&mut rng, n);
    let figure = compose_grid(&sources, &layout).map_err(|e| e.to_string())?;

    let (cw, ch) = (figure.image.width(), figure.image.height());
    let want_w = layout.cols * layout.cell_width + (layout.cols + 1) * layout.padding;
    let want_h = layout.rows * (layout.cell_height + layout.annotation_band_height)
        + (layout.rows + 1) * layout.padding;
    if (cw, ch) != (want_w, want_h) {
        return Err(format!("canvas {cw}x{ch}, want {want_w}x{want_h} for {layout:?}"));
    }
    if figure.placements.len() != n || figure.annotations.len() != n {
        return Err("placement count".into());
    }

    for (k, p) in figure.placements.iter().enumerate() {
        let cell = expected_cell(&layout, k + 1);
        if p.index != k + 1 || p.cell != cell {
            return Err(format!("placement {k}: {:?}, want {cell:?}", p.cell));
        }
        let c = p.content;
        if c.width == 0
            || c.height == 0
            || c.x < cell.x
            || c.y < cell.y
            || c.x + c.width > cell.x + cell.width
            || c.y + c.height > cell.y + cell.height
        {
            return Err(format!("content {c:?} escapes cell {cell:?}"));
        }
        if cell.x + cell.width > cw || cell.y + cell.height + layout.annotation_band_height > ch {
            return Err(format!("cell {cell:?} leaves the canvas"));
        }
        // Letterboxing fills one axis and centres the other.
        if c.width != cell.width && c.height != cell.height {
            return Err(format!("content {c:?} fills neither axis of {cell:?}"));
        }
        let (lx, ly) = (c.x - cell.x, c.y - cell.y);
        let (rx, ry) = (cell.width - c.width - lx, cell.height - c.height - ly);
        if lx.abs_diff(rx) > 1 || ly.abs_diff(ry) > 1 {
            return Err(format!("content {c:?} not centred in {cell:?}"));
        }
        if figure.annotations[k].caption != format!("Image {}", k + 1) {
            return Err(format!("caption {:?}", figure.annotations[k].caption));
        }
        for q in &figure.placements[..k] {
            if p.cell.intersects(&q.cell) {
                return Err(format!("cells {} and {} overlap", q.index, p.index));
            }
        }
    }

    // Every pixel outside content rectangles and caption bands is background.
    let bg = Rgb(layout.background);
    let bands: Vec<Rect> = (1..=n)
        .map(|i| {
            let c = expected_cell(&layout, i);
            Rect { x: c.x, y: c.y + c.height, width: c.width, height: layout.annotation_band_height }
        })
        .collect();
    for (x, y, px) in figure.image.enumerate_pixels() {
        let covered = figure.placements.iter().any(|p| contains(&p.content, x, y))
            || bands.iter().any(|b| contains(b, x, y));
        if !covered && *px != bg {
            return Err(format!("stray pixel {px:?} at ({x},{y})"));
        }
    }

    let again = compose_grid(&sources, &layout).map_err(|e| e.to_string())?;
    let a = figure.encode_png().map_err(|e| e.to_string())?;
    let b = again.encode_png().map_err(|e| e.to_string())?;
    if a != b {
        return Err("second composition differs".into());
    }
    Ok(())
}

/// Composes solid-colour sources and returns the worst per-channel deviation
/// of the mean colour inside each content rectangle, plus whether every
/// content centre pixel equals its source colour.
pub fn solid_color_probe(layout: &GridLayout, colors: &[[u8; 3]], sizes: &[(u32, u32)]) -> (u32, bool) {
    let sources: Vec<GridSource> = colors
        .iter()
        .zip(sizes)
        .enumerate()
        .map(|(i, (c, &(w, h)))| GridSource::Bitmap {
            id: format!("solid{i}"),
            image: RgbImage::from_pixel(w, h, Rgb(*c)),
        })
        .collect();
    let figure = compose_grid(&sources, layout).unwrap();
    let mut worst = 0;
    let mut centres = true;
    for (p, color) in figure.placements.iter().zip(colors) {
        let c = p.content;
        let mut sum = [0u64; 3];
        for y in c.y..c.y + c.height {
            for x in c.x..c.x + c.width {
                let px = figure.image.get_pixel(x, y);
                for ch in 0..3 {
                    sum[ch] += u64::from(px[ch]);
                }
            }
        }
        let area = u64::from(c.width) * u64::from(c.height);
        for ch in 0..3 {
            let mean = (sum[ch] + area / 2) / area;
            worst = worst.max((mean as i64 - i64::from(color[ch])).unsigned_abs() as u32);
        }
        let (cx, cy) = (c.x + c.width / 2, c.y + c.height / 2);
        centres &= figure.image.get_pixel(cx, cy).0 == *color;
    }
    (worst, centres)
}
