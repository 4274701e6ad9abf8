//! Network families sharing one forward/backward interface.
//!
//! [`LbnModel`] is the linearizing belief net. [`ReluNet`] and [`SbnNet`] are
//! the deterministic ReLU and conditional sigmoid belief net baselines.

mod config;
mod gating;
mod layer;
mod lbn;
mod relu;
mod sbn;
mod trace;

pub use config::{LbnConfig, ModelSpec, ReluConfig, SbnConfig, Topology, PRESETS};
pub use gating::GatingNetwork;
pub use layer::{Layer, LayerKind};
pub use lbn::{build_conv_lbn, LbnCache, LbnModel, LinearizingBlock};
pub use relu::{relu_forward, threshold_lbn, ReluCache, ReluNet};
pub use sbn::{sbn_forward, SbnCache, SbnNet};
pub use trace::{threshold, ForwardPass, GateDraw, GateSource, GateTrace, GradAccumulator, Grads};

use crate::tensor::{Rng, Tensor};
use crate::{Error, Result};

/// Anything owning an ordered list of parameter tensors.
pub trait Parameterized {
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;
    fn parameter_names(&self) -> Vec<String>;

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    fn zero_grads(&self) -> GradAccumulator {
        GradAccumulator::zeros_like(&self.parameters())
    }
}

/// Expected input: a flat vector of the given width, or a `c×h×w` image with
/// the given channel count and any spatial size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputLayout {
    Dense(usize),
    Conv(usize),
}

impl InputLayout {
    pub fn check(&self, x: &Tensor) -> Result<()> {
        let ok = match *self {
            InputLayout::Dense(n) => x.rank() == 1 && x.len() == n,
            InputLayout::Conv(c) => x.rank() == 3 && x.shape()[0] == c,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("input {:?} does not fit {self:?}", x.shape())))
        }
    }
}

pub trait GatedNetwork: Parameterized {
    type Cache;

    fn input_layout(&self) -> InputLayout;

    /// Number of layers of binary units that multiply or replace activations.
    fn gated_layers(&self) -> usize;

    fn has_stochastic_hidden(&self) -> bool;

    fn forward_pass(&self, x: &Tensor, source: &mut GateSource<'_>) -> Result<ForwardPass<Self::Cache>>;

    /// Adds `∂(d_output · output)/∂θ` into `acc`, treating every recorded
    /// residual as a constant.
    fn backward_pass(&self, cache: &Self::Cache, d_output: &Tensor, acc: &mut GradAccumulator) -> Result<()>;
}

/// Draws every gate (and stochastic gating hidden) from `rng`.
pub fn forward_sample<N: GatedNetwork>(model: &N, x: &Tensor, rng: &mut Rng) -> Result<(Tensor, Vec<GateTrace>)> {
    model.input_layout().check(x)?;
    let pass = model.forward_pass(x, &mut GateSource::Sample(rng))?;
    Ok((pass.output, pass.traces))
}

/// Exact predictive mean of a model with at most one gated layer: gates are
/// replaced by their rates, which is exact because the output is linear in
/// the gates.
pub fn forward_mean<N: GatedNetwork>(model: &N, x: &Tensor) -> Result<Tensor> {
    if model.gated_layers() > 1 {
        return Err(Error::Unsupported(format!(
            "the mean is only exact with one gated layer, this model has {}",
            model.gated_layers()
        )));
    }
    model.input_layout().check(x)?;
    Ok(model.forward_pass(x, &mut GateSource::Mean)?.output)
}

/// Gates hard-thresholded layer by layer; `rate >= 0.5` fires.
pub fn forward_map<N: GatedNetwork>(model: &N, x: &Tensor) -> Result<Tensor> {
    model.input_layout().check(x)?;
    Ok(model.forward_pass(x, &mut GateSource::Map)?.output)
}

/// Any of the three families, for code that loads models from checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Lbn(LbnModel),
    Relu(ReluNet),
    Sbn(SbnNet),
}

#[derive(Debug, Clone)]
pub enum AnyCache {
    Lbn(LbnCache),
    Relu(ReluCache),
    Sbn(SbnCache),
}

impl AnyModel {
    /// Zero-filled model for `spec`.
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        Ok(match spec {
            ModelSpec::Lbn(c) => AnyModel::Lbn(LbnModel::new(c)?),
            ModelSpec::Relu(c) => AnyModel::Relu(ReluNet::new(c)?),
            ModelSpec::Sbn(c) => AnyModel::Sbn(SbnNet::new(c)?),
        })
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            AnyModel::Lbn(m) => ModelSpec::Lbn(m.config().clone()),
            AnyModel::Relu(m) => ModelSpec::Relu(m.config().clone()),
            AnyModel::Sbn(m) => ModelSpec::Sbn(m.config().clone()),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            AnyModel::Lbn(_) => "lbn",
            AnyModel::Relu(_) => "relu",
            AnyModel::Sbn(_) => "csbn",
        }
    }
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            AnyModel::Lbn($m) => $body,
            AnyModel::Relu($m) => $body,
            AnyModel::Sbn($m) => $body,
        }
    };
}

impl Parameterized for AnyModel {
    fn parameters(&self) -> Vec<&Tensor> {
        dispatch!(self, m => m.parameters())
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        dispatch!(self, m => m.parameters_mut())
    }

    fn parameter_names(&self) -> Vec<String> {
        dispatch!(self, m => m.parameter_names())
    }
}

impl GatedNetwork for AnyModel {
    type Cache = AnyCache;

    fn input_layout(&self) -> InputLayout {
        dispatch!(self, m => m.input_layout())
    }

    fn gated_layers(&self) -> usize {
        dispatch!(self, m => m.gated_layers())
    }

    fn has_stochastic_hidden(&self) -> bool {
        dispatch!(self, m => m.has_stochastic_hidden())
    }

    fn forward_pass(&self, x: &Tensor, source: &mut GateSource<'_>) -> Result<ForwardPass<AnyCache>> {
        fn wrap<C>(p: ForwardPass<C>, f: impl FnOnce(C) -> AnyCache) -> ForwardPass<AnyCache> {
            ForwardPass {
                output: p.output,
                traces: p.traces,
                cache: f(p.cache),
            }
        }
        Ok(match self {
            AnyModel::Lbn(m) => wrap(m.forward_pass(x, source)?, AnyCache::Lbn),
            AnyModel::Relu(m) => wrap(m.forward_pass(x, source)?, AnyCache::Relu),
            AnyModel::Sbn(m) => wrap(m.forward_pass(x, source)?, AnyCache::Sbn),
        })
    }

    fn backward_pass(&self, cache: &AnyCache, d_output: &Tensor, acc: &mut GradAccumulator) -> Result<()> {
        match (self, cache) {
            (AnyModel::Lbn(m), AnyCache::Lbn(c)) => m.backward_pass(c, d_output, acc),
            (AnyModel::Relu(m), AnyCache::Relu(c)) => m.backward_pass(c, d_output, acc),
            (AnyModel::Sbn(m), AnyCache::Sbn(c)) => m.backward_pass(c, d_output, acc),
            _ => Err(Error::TraceMismatch(
                "forward pass came from a different model family".into(),
            )),
        }
    }
}

impl From<LbnModel> for AnyModel {
    fn from(m: LbnModel) -> Self {
        AnyModel::Lbn(m)
    }
}

impl From<ReluNet> for AnyModel {
    fn from(m: ReluNet) -> Self {
        AnyModel::Relu(m)
    }
}

impl From<SbnNet> for AnyModel {
    fn from(m: SbnNet) -> Self {
        AnyModel::Sbn(m)
    }
}
