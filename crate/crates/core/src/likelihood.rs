//! Monte Carlo mixture log-likelihood under unit-variance Gaussians, its
//! gradient, and an exact enumeration for small gate counts.

use std::f64::consts::PI;

use crate::model::{ForwardPass, GateSource, GateTrace, GatedNetwork, GradAccumulator, Grads};
use crate::tensor::{logsumexp_slice, Rng, Tensor};
use crate::{Error, Result};

/// Largest total gate count [`exact_log_likelihood`] will enumerate.
pub const MAX_ENUMERATED_GATES: usize = 20;

/// Per-example summary of a `k`-sample estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureLossReport {
    pub k: usize,
    pub output_dim: usize,
    /// `‖f(x, gᵢ) − y‖²` per sample.
    pub distances: Vec<f64>,
    /// Softmax of `−dᵢ/2`.
    pub weights: Vec<f64>,
    pub log_likelihood: f64,
}

impl MixtureLossReport {
    pub fn from_distances(distances: Vec<f64>, output_dim: usize) -> Result<Self> {
        let k = distances.len();
        if k == 0 {
            return Err(Error::Config("need at least one Monte Carlo sample".into()));
        }
        let logits: Vec<f64> = distances.iter().map(|d| -0.5 * d).collect();
        let lse = logsumexp_slice(&logits).expect("nonempty");
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shifted: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = shifted.iter().sum();
        let weights = shifted.iter().map(|e| e / total).collect();
        let log_likelihood = gaussian_log_norm(output_dim) + lse - (k as f64).ln();
        Ok(Self {
            k,
            output_dim,
            distances,
            weights,
            log_likelihood,
        })
    }

    /// The estimate before the logarithm, `p̂(y|x)`.
    pub fn probability(&self) -> f64 {
        self.log_likelihood.exp()
    }
}

/// `−(M/2) log 2π`.
pub fn gaussian_log_norm(output_dim: usize) -> f64 {
    -0.5 * output_dim as f64 * (2.0 * PI).ln()
}

fn squared_distance(f: &Tensor, y: &Tensor) -> Result<f64> {
    if f.shape() != y.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            f.shape(),
            y.shape()
        )));
    }
    Ok(f.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum())
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::Config("k must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Draws `k` gate configurations and returns the stabilized estimate with the
/// traces of every sample.
pub fn mc_log_likelihood<N: GatedNetwork>(
    model: &N,
    x: &Tensor,
    y: &Tensor,
    k: usize,
    rng: &mut Rng,
) -> Result<(MixtureLossReport, Vec<Vec<GateTrace>>)> {
    check_k(k)?;
    model.input_layout().check(x)?;
    let mut distances = Vec::with_capacity(k);
    let mut traces = Vec::with_capacity(k);
    for _ in 0..k {
        let pass = model.forward_pass(x, &mut GateSource::Sample(rng))?;
        distances.push(squared_distance(&pass.output, y)?);
        traces.push(pass.traces);
    }
    Ok((MixtureLossReport::from_distances(distances, y.len())?, traces))
}

/// `−log p̂(y|x)` with every sample's residuals frozen at `traces`. This is
/// the function whose exact gradient [`backward`] returns.
pub fn frozen_surrogate_nll<N: GatedNetwork>(
    model: &N,
    x: &Tensor,
    y: &Tensor,
    traces: &[Vec<GateTrace>],
) -> Result<f64> {
    let mut distances = Vec::with_capacity(traces.len());
    for t in traces {
        let pass = model.forward_pass(x, &mut GateSource::Replay(t))?;
        distances.push(squared_distance(&pass.output, y)?);
    }
    Ok(-MixtureLossReport::from_distances(distances, y.len())?.log_likelihood)
}

fn replay_passes<N: GatedNetwork>(
    model: &N,
    report: &MixtureLossReport,
    traces: &[Vec<GateTrace>],
    x: &Tensor,
    y: &Tensor,
) -> Result<Vec<ForwardPass<N::Cache>>> {
    if traces.len() != report.k || report.distances.len() != report.k {
        return Err(Error::TraceMismatch(format!(
            "report has {} samples, got {} traces",
            report.k,
            traces.len()
        )));
    }
    let mut passes = Vec::with_capacity(traces.len());
    for (i, t) in traces.iter().enumerate() {
        let pass = model.forward_pass(x, &mut GateSource::Replay(t))?;
        let d = squared_distance(&pass.output, y)?;
        if d != report.distances[i] {
            return Err(Error::TraceMismatch(format!(
                "sample {i} replays to distance {d}, report says {}",
                report.distances[i]
            )));
        }
        passes.push(pass);
    }
    Ok(passes)
}

/// Adds `scale · ∂(−log p̂)/∂θ` for the given passes into `acc`.
fn accumulate<N: GatedNetwork>(
    model: &N,
    passes: &[ForwardPass<N::Cache>],
    weights: &[f64],
    y: &Tensor,
    scale: f64,
    acc: &mut GradAccumulator,
) -> Result<()> {
    for (pass, &w) in passes.iter().zip(weights) {
        let c = w * scale;
        if c == 0.0 {
            continue;
        }
        let dy: Vec<f64> = pass
            .output
            .data()
            .iter()
            .zip(y.data())
            .map(|(f, t)| c * (f - t))
            .collect();
        let dy = Tensor::new(pass.output.shape().to_vec(), dy)?;
        model.backward_pass(&pass.cache, &dy, acc)?;
    }
    Ok(())
}

fn backward_acc<N: GatedNetwork>(
    model: &N,
    report: &MixtureLossReport,
    traces: &[Vec<GateTrace>],
    x: &Tensor,
    y: &Tensor,
) -> Result<GradAccumulator> {
    let passes = replay_passes(model, report, traces, x, y)?;
    let mut acc = model.zero_grads();
    accumulate(model, &passes, &report.weights, y, 1.0, &mut acc)?;
    Ok(acc)
}

/// Gradient of `−log p̂(y|x)` for the samples in `report`/`traces`, with
/// every sampled gate written as `rate + ε` and `ε` held constant.
pub fn backward<N: GatedNetwork>(
    model: &N,
    report: &MixtureLossReport,
    traces: &[Vec<GateTrace>],
    x: &Tensor,
    y: &Tensor,
) -> Result<Grads> {
    Ok(backward_acc(model, report, traces, x, y)?.finish())
}

/// The two additive parts of [`backward`]'s gradient. For the linear weights
/// of gated blocks, `multiplicative` is the path through `g ⊙ a` with the
/// sampled gates and `gating` the path through the gate rates. Every other
/// parameter has its whole gradient in `multiplicative` and zeros in
/// `gating`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPaths {
    pub multiplicative: Grads,
    pub gating: Grads,
}

impl GradientPaths {
    pub fn total(&self) -> Grads {
        let parts = self
            .multiplicative
            .0
            .iter()
            .zip(&self.gating.0)
            .map(|(m, g)| {
                let data = m.data().iter().zip(g.data()).map(|(a, b)| a + b).collect();
                Tensor::new(m.shape().to_vec(), data).expect("finite sum of finite gradients")
            })
            .collect();
        Grads(parts)
    }
}

pub fn decompose_gradient<N: GatedNetwork>(
    model: &N,
    report: &MixtureLossReport,
    traces: &[Vec<GateTrace>],
    x: &Tensor,
    y: &Tensor,
) -> Result<GradientPaths> {
    let acc = backward_acc(model, report, traces, x, y)?;
    let mut multiplicative = Vec::with_capacity(acc.len());
    let mut gating = Vec::with_capacity(acc.len());
    for i in 0..acc.len() {
        let (d, g) = acc.paths(i);
        multiplicative.push(d.clone());
        gating.push(g.cloned().unwrap_or_else(|| Tensor::zeros(d.shape())));
    }
    Ok(GradientPaths {
        multiplicative: Grads(multiplicative),
        gating: Grads(gating),
    })
}

/// One example's contribution to a minibatch step: samples `k` passes, adds
/// `scale · ∂(−log p̂)/∂θ` into `acc`, and returns the report.
pub fn sample_and_accumulate<N: GatedNetwork>(
    model: &N,
    x: &Tensor,
    y: &Tensor,
    k: usize,
    rng: &mut Rng,
    scale: f64,
    acc: &mut GradAccumulator,
) -> Result<MixtureLossReport> {
    check_k(k)?;
    let mut passes = Vec::with_capacity(k);
    let mut distances = Vec::with_capacity(k);
    for _ in 0..k {
        let pass = model.forward_pass(x, &mut GateSource::Sample(rng))?;
        distances.push(squared_distance(&pass.output, y)?);
        passes.push(pass);
    }
    let report = MixtureLossReport::from_distances(distances, y.len())?;
    accumulate(model, &passes, &report.weights, y, scale, acc)?;
    Ok(report)
}

fn log_bernoulli(rate: f64, gate: f64) -> f64 {
    if gate == 1.0 {
        rate.ln()
    } else {
        (1.0 - rate).ln()
    }
}

/// `log p(y|x)` summed exactly over every gate configuration.
pub fn exact_log_likelihood<N: GatedNetwork>(model: &N, x: &Tensor, y: &Tensor) -> Result<f64> {
    if model.has_stochastic_hidden() {
        return Err(Error::Unsupported(
            "exact enumeration needs deterministic gating hiddens".into(),
        ));
    }
    model.input_layout().check(x)?;
    let probe = model.forward_pass(x, &mut GateSource::Mean)?;
    let total: usize = probe.traces.iter().map(|t| t.gates.gates.len()).sum();
    if total > MAX_ENUMERATED_GATES {
        return Err(Error::Unsupported(format!(
            "{total} gates exceed the enumeration bound of {MAX_ENUMERATED_GATES}"
        )));
    }
    let mut terms = Vec::with_capacity(1 << total);
    let mut prefix = Vec::with_capacity(probe.traces.len());
    enumerate(model, x, y, probe.traces.len(), &mut prefix, 0.0, &mut terms)?;
    Ok(logsumexp_slice(&terms).expect("at least one configuration"))
}

fn enumerate<N: GatedNetwork>(
    model: &N,
    x: &Tensor,
    y: &Tensor,
    layers: usize,
    prefix: &mut Vec<Tensor>,
    log_mass: f64,
    terms: &mut Vec<f64>,
) -> Result<()> {
    let pass = model.forward_pass(x, &mut GateSource::Pinned(prefix))?;
    if prefix.len() == layers {
        let d = squared_distance(&pass.output, y)?;
        terms.push(log_mass + gaussian_log_norm(y.len()) - 0.5 * d);
        return Ok(());
    }
    let rates = pass.traces[prefix.len()].gates.rates.clone();
    let n = rates.len();
    for mask in 0u64..(1u64 << n) {
        let mut gates = Tensor::zeros(rates.shape());
        let mut lm = log_mass;
        for (i, (g, &r)) in gates.data_mut().iter_mut().zip(rates.data()).enumerate() {
            *g = ((mask >> i) & 1) as f64;
            lm += log_bernoulli(r, *g);
        }
        if lm == f64::NEG_INFINITY {
            continue;
        }
        prefix.push(gates);
        enumerate(model, x, y, layers, prefix, lm, terms)?;
        prefix.pop();
    }
    Ok(())
}
