//! Datasets, image files, and checkpoint serialization.

pub mod checkpoint;
pub mod image_io;

use std::path::PathBuf;

use crate::codec::Image;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 0x7261_696e,
            Split::Test => 0x7465_7374,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Synthetic,
    Directory(PathBuf),
}

/// A set of equally-shaped images.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub items: Vec<Image<T>>,
    pub split: Split,
    pub source: Source,
}

impl<T: Real> Dataset<T> {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Per-pixel mean over the whole set; the classic baseline
    /// reconstruction.
    pub fn mean_image(&self) -> Image<T> {
        let [c, h, w] = self.items[0].shape();
        let mut acc = vec![0.0f64; c * h * w];
        for img in &self.items {
            for (a, v) in acc.iter_mut().zip(img.data()) {
                *a += v.as_f64();
            }
        }
        let n = self.items.len() as f64;
        let data = acc.iter().map(|a| T::from_f64(a / n)).collect();
        Image::new(c, h, w, data).expect("same shape as items")
    }
}

/// Procedural RGB images: a bilinear color gradient background plus 2-5
/// filled shapes (disks, rectangles, bars). Deterministic per (seed, split);
/// train and test streams never overlap.
pub fn synth_dataset<T: Real>(n: usize, size: usize, seed: u64, split: Split) -> Result<Dataset<T>> {
    if n == 0 {
        return Err(Error::Config("synthetic dataset size must be >= 1".into()));
    }
    let items = (0..n)
        .map(|i| synth_image(size, RngStream::new(seed, &[0xda7a, split.tag(), i as u64])))
        .collect();
    Ok(Dataset {
        items,
        split,
        source: Source::Synthetic,
    })
}

fn synth_image<T: Real>(size: usize, mut rng: RngStream) -> Image<T> {
    let mut px = vec![[0.0f64; 3]; size * size];

    // Smooth background: bilinear blend of four random corner colors.
    let corners: Vec<[f64; 3]> = (0..4)
        .map(|_| [rng.uniform_f64(), rng.uniform_f64(), rng.uniform_f64()])
        .collect();
    for y in 0..size {
        let fy = y as f64 / (size - 1).max(1) as f64;
        for x in 0..size {
            let fx = x as f64 / (size - 1).max(1) as f64;
            for c in 0..3 {
                let top = corners[0][c] * (1.0 - fx) + corners[1][c] * fx;
                let bot = corners[2][c] * (1.0 - fx) + corners[3][c] * fx;
                px[y * size + x][c] = top * (1.0 - fy) + bot * fy;
            }
        }
    }

    let shapes = 2 + rng.index(4); // 2..=5
    for _ in 0..shapes {
        let color = [rng.uniform_f64(), rng.uniform_f64(), rng.uniform_f64()];
        let cx = rng.uniform_f64() * size as f64;
        let cy = rng.uniform_f64() * size as f64;
        let half = (0.08 + 0.17 * rng.uniform_f64()) * size as f64;
        let kind = rng.index(3);
        for y in 0..size {
            for x in 0..size {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                let inside = match kind {
                    0 => dx * dx + dy * dy <= half * half,
                    1 => dx.abs() <= half && dy.abs() <= half * 0.7,
                    _ => (dx + dy).abs() <= half * 0.5,
                };
                if inside {
                    px[y * size + x] = color;
                }
            }
        }
    }

    let mut data = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        for p in &px {
            data.push(T::from_f64(p[c].clamp(0.0, 1.0)));
        }
    }
    Image::new(3, size, size, data).expect("built to shape")
}
