//! Shared oracles for the integration tests and the acceptance suite.
#![allow(dead_code)]

use lbn_core::likelihood::{backward, mc_log_likelihood};
use lbn_core::model::ModelSpec;
use lbn_core::model::{LbnConfig, Topology};
use lbn_core::optim::init_model;
use lbn_core::{AnyModel, GateSource, GateTrace, GatedNetwork, Parameterized, Rng, Tensor};

/// Gradients smaller than this are compared in absolute rather than relative
/// terms, since central differences cannot resolve them better than roughly
/// `eps · |loss| / step`.
pub const FD_FLOOR: f64 = 1e-4;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

/// Largest relative error between the analytic gradient of the frozen-noise
/// surrogate and central differences with step `h`, over every parameter.
pub fn fd_max_rel_err<N: GatedNetwork + Clone>(model: &N, x: &Tensor, y: &Tensor, k: usize, h: f64, seed: u64) -> f64 {
    let (report, traces) = mc_log_likelihood(model, x, y, k, &mut Rng::new(seed)).unwrap();
    let analytic = backward(model, &report, &traces, x, y).unwrap();
    let numeric = numeric_grad(model, x, y, &traces, h);
    analytic
        .flat()
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Independent evaluation of the frozen-noise surrogate: replays each
/// sample's residuals and computes `−lse(−d/2) + log k` directly. The
/// Gaussian normalizer is a constant and is left out to keep the loss small.
pub fn surrogate_without_constant<N: GatedNetwork>(
    model: &N,
    x: &Tensor,
    y: &Tensor,
    traces: &[Vec<GateTrace>],
) -> f64 {
    let halves: Vec<f64> = traces
        .iter()
        .map(|t| {
            let f = model.forward_pass(x, &mut GateSource::Replay(t)).unwrap().output;
            -0.5 * f
                .data()
                .iter()
                .zip(y.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .collect();
    let m = halves.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + halves.iter().map(|h| (h - m).exp()).sum::<f64>().ln();
    (traces.len() as f64).ln() - lse
}

pub fn numeric_grad<N: GatedNetwork + Clone>(
    model: &N,
    x: &Tensor,
    y: &Tensor,
    traces: &[Vec<GateTrace>],
    h: f64,
) -> Vec<f64> {
    let mut m = model.clone();
    let sizes: Vec<usize> = m.parameters().iter().map(|p| p.len()).collect();
    let mut out = Vec::new();
    for (pi, &n) in sizes.iter().enumerate() {
        for j in 0..n {
            let orig = m.parameters()[pi].data()[j];
            m.parameters_mut()[pi].data_mut()[j] = orig + h;
            let up = surrogate_without_constant(&m, x, y, traces);
            m.parameters_mut()[pi].data_mut()[j] = orig - h;
            let down = surrogate_without_constant(&m, x, y, traces);
            m.parameters_mut()[pi].data_mut()[j] = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

/// A target near the model's rate-gated output, so that the loss and hence
/// the rounding error of finite differences stay small.
pub fn nearby_target<N: GatedNetwork>(model: &N, x: &Tensor, spread: f64, rng: &mut Rng) -> Tensor {
    let f = model.forward_pass(x, &mut GateSource::Mean).unwrap().output;
    let data = f.data().iter().map(|v| v + spread * rng.normal()).collect();
    Tensor::new(f.shape().to_vec(), data).unwrap()
}

/// Dense LBN, 6 inputs, 8 gated units, 4 outputs, two stochastic hidden
/// layers in the gating network.
pub fn dense_fd_model(seed: u64) -> AnyModel {
    let config = LbnConfig {
        stochastic_hidden: true,
        ..LbnConfig::dense(6, &[8], 4, &[5, 5])
    };
    init_model(&ModelSpec::Lbn(config), &mut Rng::new(seed)).unwrap()
}

/// Convolutional LBN with two blocks of four 3×3 kernels.
pub fn conv_fd_model(seed: u64) -> AnyModel {
    let config = LbnConfig {
        topology: Topology::Conv {
            in_channels: 1,
            out_channels: 1,
            kernel: 3,
            output_kernel: 3,
        },
        widths: vec![4, 4],
        gating_hidden: vec![4],
        gating_kernel: 3,
        gating_deep_kernel: 1,
        stochastic_hidden: false,
    };
    init_model(&ModelSpec::Lbn(config), &mut Rng::new(seed)).unwrap()
}

pub fn random_tensor(shape: &[usize], scale: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.normal()).collect()).unwrap()
}

/// Moves every gating bias away from the default so that rates are not all
/// clustered near the same value.
pub fn jitter_gating_biases(model: &mut AnyModel, rng: &mut Rng) {
    let names = model.parameter_names();
    for (name, p) in names.iter().zip(model.parameters_mut()) {
        if name.contains("gating") && name.ends_with("bias") {
            for v in p.data_mut() {
                *v = rng.normal();
            }
        }
    }
}
