//! Deterministic random streams.
//!
//! The generator is ChaCha8 seeded through `seed_from_u64`; the 64-bit stream
//! id selects one of ChaCha's independent keystreams for the same seed, which
//! is how parallel or per-example sampling gets reproducible sub-streams.
//! Uniforms take the top 53 bits of one `u64` draw. Normals use the
//! Box–Muller transform and cache the second variate. These conversions are
//! part of the reproducibility contract and must not change.

use super::{Tensor, TensorError, TensorResult};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
            spare_normal: None,
        }
    }

    /// Fresh generator on another stream of the same seed. Independent of how
    /// much of `self` has been consumed.
    pub fn substream(&self, stream: u64) -> Rng {
        Rng::with_stream(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u lies in (0, 1], so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Single Bernoulli draw; `rate` must already be validated to `[0, 1]`.
    #[inline]
    pub fn bernoulli(&mut self, rate: f64) -> f64 {
        if self.uniform() < rate {
            1.0
        } else {
            0.0
        }
    }

    /// Uniform integer in `[0, n)` by rejection, `n > 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n) - 1;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return (v % n) as usize;
            }
        }
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

pub fn sample_uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> TensorResult<Tensor> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(TensorError::Invalid(format!("uniform bounds [{lo}, {hi})")));
    }
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(lo, hi)).collect();
    Ok(Tensor::from_parts(shape.to_vec(), data))
}

pub fn sample_normal(rng: &mut Rng, shape: &[usize], mean: f64, std: f64) -> TensorResult<Tensor> {
    if !(std >= 0.0 && std.is_finite() && mean.is_finite()) {
        return Err(TensorError::Invalid(format!("normal parameters mean={mean} std={std}")));
    }
    let n = shape.iter().product();
    let data = (0..n).map(|_| mean + std * rng.normal()).collect();
    Ok(Tensor::from_parts(shape.to_vec(), data))
}

/// Independent Bernoulli draws with per-element rates; returns exactly 0.0 or 1.0.
pub fn sample_bernoulli(rng: &mut Rng, rates: &Tensor) -> TensorResult<Tensor> {
    if let Some(index) = rates.data().iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(TensorError::Invalid(format!(
            "bernoulli rate {} at index {index} outside [0, 1]",
            rates.data()[index]
        )));
    }
    let data = rates.data().iter().map(|&p| rng.bernoulli(p)).collect();
    Ok(Tensor::from_parts(rates.shape().to_vec(), data))
}
