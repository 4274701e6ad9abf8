//! One-dimensional regression with two modes per input.

use crate::optim::Dataset;
use crate::tensor::{Rng, Tensor};
use crate::{Error, Result};

/// Targets are divided by this before the model sees them, the same way
/// pixels are divided by the preprocessing scale. In model units the two
/// modes sit ±5 apart from zero, wide enough for unit-variance components to
/// separate them.
pub const TOY_TARGET_SCALE: f64 = 0.2;

/// Standard deviation of the noise around each mode.
pub const TOY_NOISE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToySample {
    pub x: f64,
    pub y: f64,
}

/// `x ~ U[−1, 1]`, `y = s (1 + 0.3 x) + N(0, 0.05²)` with `s = ±1` equally
/// likely.
pub fn toy_bimodal_dataset(n: usize, rng: &mut Rng) -> Result<Vec<ToySample>> {
    if n < 1 {
        return Err(Error::Config("toy dataset needs at least one sample".into()));
    }
    Ok((0..n)
        .map(|_| {
            let x = rng.uniform_range(-1.0, 1.0);
            let s = if rng.bernoulli(0.5) == 1.0 { 1.0 } else { -1.0 };
            let y = s * (1.0 + 0.3 * x) + TOY_NOISE * rng.normal();
            ToySample { x, y }
        })
        .collect())
}

/// Model input for `x`: `[x, 1]`. The constant feature lets bias-free linear
/// units produce offsets.
pub fn toy_features(x: f64) -> Tensor {
    Tensor::from_parts(vec![2], vec![x, 1.0])
}

pub fn toy_to_model(y: f64) -> f64 {
    y / TOY_TARGET_SCALE
}

pub fn toy_from_model(v: f64) -> f64 {
    v * TOY_TARGET_SCALE
}

pub fn toy_dataset(samples: &[ToySample]) -> Dataset {
    Dataset {
        inputs: samples.iter().map(|s| toy_features(s.x)).collect(),
        targets: samples
            .iter()
            .map(|s| Tensor::from_parts(vec![1], vec![toy_to_model(s.y)]))
            .collect(),
    }
}
