//! Procedural piecewise-smooth graymaps for when no photo corpus is at hand.

use super::ImageGray;
use crate::tensor::Rng;
use crate::Result;

/// `count` images of `size × size`: a random linear gradient overlaid with
/// flat and shaded rectangles and discs.
pub fn synthetic_images(count: usize, size: usize, rng: &mut Rng) -> Result<Vec<ImageGray>> {
    (0..count).map(|_| synthetic_image(size, rng)).collect()
}

fn synthetic_image(size: usize, rng: &mut Rng) -> Result<ImageGray> {
    let s = size as f64;
    let base = rng.uniform_range(0.2, 0.8);
    let gx = rng.uniform_range(-0.3, 0.3) / s;
    let gy = rng.uniform_range(-0.3, 0.3) / s;
    let mut px: Vec<f64> = (0..size * size)
        .map(|i| base + gx * (i % size) as f64 + gy * (i / size) as f64)
        .collect();
    let shapes = 4 + rng.below(8);
    for _ in 0..shapes {
        let level = rng.uniform();
        let shade = rng.uniform_range(-0.2, 0.2) / s;
        let cx = rng.uniform_range(0.0, s);
        let cy = rng.uniform_range(0.0, s);
        let extent = rng.uniform_range(0.05, 0.35) * s;
        let disc = rng.bernoulli(0.5) == 1.0;
        let aspect = rng.uniform_range(0.5, 2.0);
        for r in 0..size {
            for c in 0..size {
                let dx = c as f64 - cx;
                let dy = r as f64 - cy;
                let inside = if disc {
                    dx * dx + dy * dy <= extent * extent
                } else {
                    dx.abs() <= extent * aspect && dy.abs() <= extent / aspect
                };
                if inside {
                    px[r * size + c] = level + shade * (dx + dy);
                }
            }
        }
    }
    ImageGray::from_clipped(size, size, &px)
}
