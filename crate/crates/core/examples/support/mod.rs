//! Synthetic chest X-ray shaped dataset for the examples.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use image::{Luma, GrayImage};

/// Writes a `train`/`test` tree with two classes. COVID images get a bright
/// blotch so the two classes are visually distinct.
pub fn synthetic_dataset(root: &Path, train: [usize; 2], test: [usize; 2]) -> PathBuf {
    let mut seed = 1u32;
    for (split, counts) in [("train", train), ("test", test)] {
        for (class, n) in ["COVID", "Normal"].into_iter().zip(counts) {
            let dir = root.join(split).join(class);
            std::fs::create_dir_all(&dir).unwrap();
            for i in 0..n {
                seed = seed.wrapping_mul(1_103_515_245).wrapping_add(12_345);
                let s = seed;
                let img = GrayImage::from_fn(64, 64, |x, y| {
                    let h = (s ^ (x << 8 | y)).wrapping_mul(2_654_435_761);
                    let base = 40 + ((h >> 24) % 60) as u8;
                    let (dx, dy) = (x as i32 - 20, y as i32 - 32);
                    if class == "COVID" && dx * dx + dy * dy < 120 {
                        Luma([base + 120])
                    } else {
                        Luma([base])
                    }
                });
                img.save(dir.join(format!("{class}-{i:03}.png"))).unwrap();
            }
        }
    }
    root.to_path_buf()
}

/// Dataset root from the first argument, or a fresh synthetic tree shaped
/// like the chest X-ray split (181 train, 46 test).
pub fn dataset_from_args(scratch: &Path) -> PathBuf {
    match std::env::args().nth(1) {
        Some(root) => PathBuf::from(root),
        None => synthetic_dataset(&scratch.join("data"), [111, 70], [26, 20]),
    }
}
