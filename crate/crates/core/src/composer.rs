//! Tiles several images into one captioned grid figure.
//!
//! Cells are filled row-major. Each source is letterboxed into its cell and
//! an "Image N" caption is drawn in a band under the cell using an embedded
//! 8x8 bitmap font, so the output does not depend on installed fonts.

use std::io::Cursor;
use std::path::PathBuf;

use font8x8::{UnicodeFonts, BASIC_FONTS};
use image::imageops::{self, FilterType};
use image::{ImageEncoder, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::LabeledImage;

/// Largest grid the built-in strategies need.
pub const MAX_DEFAULT_IMAGES: usize = 9;

const GLYPH: u32 = 8;
const CAPTION_COLOR: Rgb<u8> = Rgb([0, 0, 0]);

#[derive(Debug, thiserror::Error)]
pub enum ComposeError {
    #[error("{count} images do not fit a {rows}x{cols} grid")]
    Capacity { count: usize, rows: u32, cols: u32 },
    #[error("no images to compose")]
    Empty,
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error("cannot decode `{id}`: {reason}")]
    Decode { id: String, reason: String },
    #[error("no default layout for {0} images (max {MAX_DEFAULT_IMAGES})")]
    UnsupportedLayout(usize),
    #[error("png encoding failed: {0}")]
    Encode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub rows: u32,
    pub cols: u32,
    pub cell_width: u32,
    pub cell_height: u32,
    pub padding: u32,
    pub annotation_band_height: u32,
    pub background: [u8; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub fn right(&self) -> u32 {
        self.x + self.width
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.height
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x < other.right()
            && other.x < self.right()
            && self.y < other.bottom()
            && other.y < self.bottom()
    }

    pub fn center(&self) -> (u32, u32) {
        (self.x + self.width / 2, self.y + self.height / 2)
    }
}

impl GridLayout {
    pub fn capacity(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    pub fn canvas_width(&self) -> u32 {
        self.cols * self.cell_width + (self.cols + 1) * self.padding
    }

    pub fn canvas_height(&self) -> u32 {
        self.rows * (self.cell_height + self.annotation_band_height) + (self.rows + 1) * self.padding
    }

    /// Cell rectangle of the 1-based `index`, row-major.
    pub fn cell_rect(&self, index: usize) -> Rect {
        let slot = index as u32 - 1;
        let (row, col) = (slot / self.cols, slot % self.cols);
        Rect {
            x: self.padding + col * (self.cell_width + self.padding),
            y: self.padding
                + row * (self.cell_height + self.annotation_band_height + self.padding),
            width: self.cell_width,
            height: self.cell_height,
        }
    }

    /// Caption band directly below the cell of `index`.
    pub fn band_rect(&self, index: usize) -> Rect {
        let cell = self.cell_rect(index);
        Rect {
            x: cell.x,
            y: cell.bottom(),
            width: cell.width,
            height: self.annotation_band_height,
        }
    }

    fn check(&self) -> Result<(), ComposeError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(ComposeError::Layout("rows and cols must be positive".into()));
        }
        if self.cell_width == 0 || self.cell_height == 0 {
            return Err(ComposeError::Layout("cell size must be positive".into()));
        }
        Ok(())
    }
}

/// Grid shape for `n` images with the default cell geometry.
///
/// One row for up to three images, otherwise three rows.
pub fn default_layout(n: usize) -> Result<GridLayout, ComposeError> {
    let (rows, cols) = match n {
        0 => return Err(ComposeError::Empty),
        1..=3 => (1, n as u32),
        4..=MAX_DEFAULT_IMAGES => (3, n.div_ceil(3) as u32),
        _ => return Err(ComposeError::UnsupportedLayout(n)),
    };
    Ok(GridLayout {
        rows,
        cols,
        cell_width: 512,
        cell_height: 512,
        padding: 8,
        annotation_band_height: 32,
        background: [255, 255, 255],
    })
}

/// A composition input.
#[derive(Debug, Clone)]
pub enum GridSource {
    File { id: String, path: PathBuf },
    Bitmap { id: String, image: RgbImage },
}

impl GridSource {
    pub fn id(&self) -> &str {
        match self {
            GridSource::File { id, .. } | GridSource::Bitmap { id, .. } => id,
        }
    }

    fn load(&self) -> Result<RgbImage, ComposeError> {
        match self {
            GridSource::Bitmap { image, .. } => Ok(image.clone()),
            GridSource::File { id, path } => image::ImageReader::open(path)
                .map_err(|e| e.to_string())
                .and_then(|r| r.with_guessed_format().map_err(|e| e.to_string()))
                .and_then(|r| r.decode().map_err(|e| e.to_string()))
                .map(|img| img.to_rgb8())
                .map_err(|reason| ComposeError::Decode {
                    id: id.clone(),
                    reason,
                }),
        }
    }
}

impl From<&LabeledImage> for GridSource {
    fn from(item: &LabeledImage) -> Self {
        GridSource::File {
            id: item.id.clone(),
            path: item.path.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub index: usize,
    pub cell: Rect,
    /// Region actually covered by the letterboxed source.
    pub content: Rect,
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub index: usize,
    pub caption: String,
}

#[derive(Debug, Clone)]
pub struct ComposedFigure {
    pub image: RgbImage,
    pub layout: GridLayout,
    pub placements: Vec<Placement>,
    pub annotations: Vec<Annotation>,
}

impl ComposedFigure {
    /// Lossless PNG encoding. Identical figures encode to identical bytes.
    pub fn encode_png(&self) -> Result<Vec<u8>, ComposeError> {
        let mut buf = Cursor::new(Vec::new());
        image::codecs::png::PngEncoder::new(&mut buf)
            .write_image(
                self.image.as_raw(),
                self.image.width(),
                self.image.height(),
                image::ExtendedColorType::Rgb8,
            )
            .map_err(|e| ComposeError::Encode(e.to_string()))?;
        Ok(buf.into_inner())
    }

    pub fn digest(&self) -> Result<String, ComposeError> {
        Ok(hex::encode(Sha256::digest(self.encode_png()?)))
    }
}

/// Letterboxed destination for a `w`x`h` source inside `cell`.
pub fn fit_rect(width: u32, height: u32, cell: Rect) -> Rect {
    // Compare cross products so the limiting axis is exact.
    let (w, h) = (u64::from(width.max(1)), u64::from(height.max(1)));
    let (cw, ch) = (u64::from(cell.width), u64::from(cell.height));
    let (fw, fh) = if w * ch >= h * cw {
        (cw, ((h * cw + w / 2) / w).clamp(1, ch))
    } else {
        (((w * ch + h / 2) / h).clamp(1, cw), ch)
    };
    let (fw, fh) = (fw as u32, fh as u32);
    Rect {
        x: cell.x + (cell.width - fw) / 2,
        y: cell.y + (cell.height - fh) / 2,
        width: fw,
        height: fh,
    }
}

pub fn compose_grid(
    sources: &[GridSource],
    layout: &GridLayout,
) -> Result<ComposedFigure, ComposeError> {
    layout.check()?;
    if sources.is_empty() {
        return Err(ComposeError::Empty);
    }
    if sources.len() > layout.capacity() {
        return Err(ComposeError::Capacity {
            count: sources.len(),
            rows: layout.rows,
            cols: layout.cols,
        });
    }

    let mut canvas = RgbImage::from_pixel(
        layout.canvas_width(),
        layout.canvas_height(),
        Rgb(layout.background),
    );
    let mut placements = Vec::with_capacity(sources.len());
    let mut annotations = Vec::with_capacity(sources.len());

    for (slot, source) in sources.iter().enumerate() {
        let index = slot + 1;
        let bitmap = source.load()?;
        let cell = layout.cell_rect(index);
        let content = fit_rect(bitmap.width(), bitmap.height(), cell);
        let scaled = if (bitmap.width(), bitmap.height()) == (content.width, content.height) {
            bitmap
        } else {
            imageops::resize(&bitmap, content.width, content.height, FilterType::Triangle)
        };
        imageops::replace(&mut canvas, &scaled, content.x.into(), content.y.into());

        let caption = format!("Image {index}");
        draw_caption(&mut canvas, &caption, layout.band_rect(index));
        placements.push(Placement {
            index,
            cell,
            content,
            source_id: source.id().to_string(),
        });
        annotations.push(Annotation { index, caption });
    }

    Ok(ComposedFigure {
        image: canvas,
        layout: *layout,
        placements,
        annotations,
    })
}

/// Draws `text` centred in `band`, scaled to the largest integer factor that
/// fits. Nothing is drawn if even scale 1 does not fit.
fn draw_caption(canvas: &mut RgbImage, text: &str, band: Rect) {
    let chars = text.chars().count() as u32;
    if chars == 0 {
        return;
    }
    let scale = (band.height.saturating_sub(4) / GLYPH).min(band.width / (chars * GLYPH));
    if scale == 0 {
        return;
    }
    let text_w = chars * GLYPH * scale;
    let text_h = GLYPH * scale;
    let x0 = band.x + (band.width - text_w) / 2;
    let y0 = band.y + (band.height - text_h) / 2;

    for (i, ch) in text.chars().enumerate() {
        let Some(rows) = BASIC_FONTS.get(ch) else {
            continue;
        };
        let gx = x0 + i as u32 * GLYPH * scale;
        for (ry, bits) in rows.iter().enumerate() {
            for rx in 0..GLYPH {
                if bits & (1 << rx) == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        canvas.put_pixel(
                            gx + rx * scale + dx,
                            y0 + ry as u32 * scale + dy,
                            CAPTION_COLOR,
                        );
                    }
                }
            }
        }
    }
}
