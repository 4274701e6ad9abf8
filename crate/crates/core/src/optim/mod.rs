//! Initialization, Adam, and the training loop.

mod config;
mod train;

pub use config::{Task, TrainConfig};
pub use train::{grid_search, train, Dataset, EpochCallback, MetricLog, MetricRow, TrainOutcome, DEFAULT_LR_GRID};

use crate::model::{AnyModel, Grads, ModelSpec, Parameterized};
use crate::tensor::{Rng, Tensor};
use crate::{Error, Result};

/// Bias given to every gating unit at initialization.
pub const GATING_BIAS_INIT: f64 = -2.0;

/// Glorot uniform on `±√(6/(fan_in + fan_out))`. Accepts a dense
/// `outputs × inputs` matrix or an `out × in × kh × kw` kernel bank, whose
/// fans include `kh·kw`.
pub fn glorot_init(shape: &[usize], rng: &mut Rng) -> Result<Tensor> {
    let (fan_in, fan_out) = match *shape {
        [o, i] => (i, o),
        [o, i, kh, kw] => (i * kh * kw, o * kh * kw),
        _ => return Err(Error::Shape(format!("no Glorot fans for shape {shape:?}"))),
    };
    if shape.contains(&0) {
        return Err(Error::Shape(format!("degenerate shape {shape:?}")));
    }
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
    Ok(Tensor::new(shape.to_vec(), data)?)
}

/// Glorot weights, gating biases at [`GATING_BIAS_INIT`], other biases zero.
pub fn init_model(spec: &ModelSpec, rng: &mut Rng) -> Result<AnyModel> {
    let mut model = AnyModel::from_spec(spec)?;
    let names = model.parameter_names();
    for (name, p) in names.iter().zip(model.parameters_mut()) {
        if name.ends_with(".weight") {
            *p = glorot_init(p.shape(), rng)?;
        } else if name.contains(".gating") {
            p.data_mut().fill(GATING_BIAS_INIT);
        } else {
            p.data_mut().fill(0.0);
        }
    }
    Ok(model)
}

/// Named preset, initialized.
pub fn init_preset(name: &str, patch_size: usize, rng: &mut Rng) -> Result<AnyModel> {
    init_model(&ModelSpec::preset(name, patch_size)?, rng)
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[&Tensor], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

pub fn adam_step(state: &mut AdamState, params: Vec<&mut Tensor>, grads: &Grads) -> Result<()> {
    if params.len() != grads.0.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.0.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(&grads.0).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::Shape(format!(
                "parameter {i}: {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if let Some(j) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: state.t as usize,
                reason: format!("non-finite gradient at parameter {i}, entry {j}"),
            });
        }
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, (p, g)) in params.into_iter().zip(&grads.0).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((w, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mj = b1 * *mj + (1.0 - b1) * gj;
            *vj = b2 * *vj + (1.0 - b2) * gj * gj;
            let mh = *mj / c1;
            let vh = *vj / c2;
            *w -= state.lr * mh / (vh.sqrt() + state.eps);
        }
    }
    Ok(())
}
