use super::config::{LbnConfig, Topology};
use super::gating::{GatingCache, GatingNetwork};
use super::layer::{Layer, LayerKind};
use super::trace::{ForwardPass, GateDraw, GateSource, GateTrace, GradAccumulator};
use super::{GatedNetwork, InputLayout, Parameterized};
use crate::tensor::{Padding, Rng, Tensor};
use crate::{Error, Result};

/// A bias-free linear map whose outputs are multiplied by binary gates drawn
/// from a gating network that reads those same outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizingBlock {
    pub linear: Layer,
    pub gating: GatingNetwork,
}

impl LinearizingBlock {
    /// Gate rates for this block's linear activations `a`. A generator is
    /// required when the gating network has stochastic hidden layers; their
    /// draws are returned alongside the rates.
    pub fn gating_rates(&self, a: &Tensor, rng: Option<&mut Rng>) -> Result<(Tensor, Vec<GateDraw>)> {
        let (rates, draws, _) = match rng {
            Some(rng) => self.gating.forward(0, a, &mut GateSource::Sample(rng))?,
            None if self.gating.has_stochastic_hidden() => {
                return Err(Error::Config(
                    "gating network samples its hidden layers but no generator was given".into(),
                ))
            }
            None => self.gating.forward(0, a, &mut GateSource::Mean)?,
        };
        Ok((rates, draws))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbnModel {
    config: LbnConfig,
    pub blocks: Vec<LinearizingBlock>,
    pub output: Layer,
}

#[derive(Debug, Clone)]
pub struct LbnCache {
    blocks: Vec<BlockCache>,
    last: Tensor,
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Tensor,
    linear: Tensor,
    gates: Tensor,
    gating: GatingCache,
}

impl LbnModel {
    /// Zero-initialized model for `config`.
    pub fn new(config: &LbnConfig) -> Result<Self> {
        config.validate()?;
        let topo = &config.topology;
        let mut blocks = Vec::with_capacity(config.widths.len());
        let mut prev = topo.input_width();
        for &w in &config.widths {
            let linear = topo.hidden_layer(prev, w, false);
            let mut layers = Vec::new();
            let mut g_prev = w;
            for (j, &g) in config.gating_hidden.iter().chain(std::iter::once(&w)).enumerate() {
                layers.push(match topo {
                    Topology::Dense { .. } => Layer::dense(g_prev, g, true),
                    Topology::Conv { .. } => {
                        let k = if j == 0 {
                            config.gating_kernel
                        } else {
                            config.gating_deep_kernel
                        };
                        Layer::conv(g_prev, g, k, Padding::Same, true)
                    }
                });
                g_prev = g;
            }
            blocks.push(LinearizingBlock {
                linear,
                gating: GatingNetwork::new(layers, config.stochastic_hidden),
            });
            prev = w;
        }
        let output = topo.output_layer(prev);
        Ok(Self {
            config: config.clone(),
            blocks,
            output,
        })
    }

    pub fn config(&self) -> &LbnConfig {
        &self.config
    }

    /// Index into `parameters()` of block `b`'s linear weight.
    pub fn linear_weight_index(&self, block: usize) -> usize {
        self.blocks[..block]
            .iter()
            .map(|b| 1 + b.gating.layers.iter().map(Layer::param_len).sum::<usize>())
            .sum()
    }

    fn gating_param_offsets(&self) -> Vec<usize> {
        (0..self.blocks.len())
            .map(|b| self.linear_weight_index(b) + 1)
            .collect()
    }

    fn output_param_index(&self) -> usize {
        self.linear_weight_index(self.blocks.len())
    }
}

impl Parameterized for LbnModel {
    fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(&b.linear.weight);
            for l in &b.gating.layers {
                out.extend(l.params());
            }
        }
        out.extend(self.output.params());
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.linear.weight);
            for l in &mut b.gating.layers {
                out.extend(l.params_mut());
            }
        }
        out.extend(self.output.params_mut());
        out
    }

    fn parameter_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push(format!("block{i}.linear.weight"));
            for (j, l) in b.gating.layers.iter().enumerate() {
                out.extend(l.param_names(&format!("block{i}.gating{j}")));
            }
        }
        out.extend(self.output.param_names("output"));
        out
    }
}

impl GatedNetwork for LbnModel {
    type Cache = LbnCache;

    fn input_layout(&self) -> InputLayout {
        match self.config.topology {
            Topology::Dense { inputs, .. } => InputLayout::Dense(inputs),
            Topology::Conv { in_channels, .. } => InputLayout::Conv(in_channels),
        }
    }

    fn gated_layers(&self) -> usize {
        self.blocks.len()
    }

    fn has_stochastic_hidden(&self) -> bool {
        self.blocks.iter().any(|b| b.gating.has_stochastic_hidden())
    }

    fn forward_pass(&self, x: &Tensor, source: &mut GateSource<'_>) -> Result<ForwardPass<LbnCache>> {
        let mut traces = Vec::with_capacity(self.blocks.len());
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut u = x.clone();
        for (l, block) in self.blocks.iter().enumerate() {
            let a = block.linear.forward(&u)?;
            let (rates, hidden, gating) = block.gating.forward(l, &a, source)?;
            let draw = source.gate(l, rates)?;
            let out: Vec<f64> = draw.gates.data().iter().zip(a.data()).map(|(g, v)| g * v).collect();
            let out = Tensor::from_parts(a.shape().to_vec(), out);
            caches.push(BlockCache {
                input: std::mem::replace(&mut u, out),
                linear: a,
                gates: draw.gates.clone(),
                gating,
            });
            traces.push(GateTrace { gates: draw, hidden });
        }
        let output = self.output.forward(&u)?;
        Ok(ForwardPass {
            output,
            traces,
            cache: LbnCache {
                blocks: caches,
                last: u,
            },
        })
    }

    fn backward_pass(&self, cache: &LbnCache, d_output: &Tensor, acc: &mut GradAccumulator) -> Result<()> {
        let out_idx = self.output_param_index();
        self.output
            .accumulate_weight_grad(&cache.last, d_output, acc.direct(out_idx))?;
        self.output.accumulate_bias_grad(d_output, acc.direct(out_idx + 1));
        let mut du = self.output.input_grad(cache.last.shape(), d_output)?;

        let gating_offsets = self.gating_param_offsets();
        for (l, block) in self.blocks.iter().enumerate().rev() {
            let bc = &cache.blocks[l];
            // h = g ⊙ a, with g = rates + ε and ε held fixed.
            let mut da_mult = du.clone();
            for (d, g) in da_mult.data_mut().iter_mut().zip(bc.gates.data()) {
                *d *= g;
            }
            let mut d_rates = du;
            for (d, a) in d_rates.data_mut().iter_mut().zip(bc.linear.data()) {
                *d *= a;
            }
            let da_gate = block.gating.backward(&bc.gating, d_rates, acc, gating_offsets[l])?;

            let w_idx = self.linear_weight_index(l);
            block
                .linear
                .accumulate_weight_grad(&bc.input, &da_mult, acc.direct(w_idx))?;
            block
                .linear
                .accumulate_weight_grad(&bc.input, &da_gate, acc.gating(w_idx))?;

            if l == 0 {
                break;
            }
            let mut da = da_mult;
            da.add_assign(&da_gate)?;
            du = block.linear.input_grad(bc.input.shape(), &da)?;
        }
        Ok(())
    }
}

/// Convolutional LBN from a config: same padding everywhere, no pooling, one
/// scalar output bias per channel.
pub fn build_conv_lbn(config: &LbnConfig) -> Result<LbnModel> {
    if !config.topology.is_conv() {
        return Err(Error::Config("build_conv_lbn needs a convolutional topology".into()));
    }
    let model = LbnModel::new(config)?;
    debug_assert!(model
        .blocks
        .iter()
        .all(|b| matches!(b.linear.kind, LayerKind::Conv(Padding::Same))));
    Ok(model)
}
