use super::config::{LbnConfig, ReluConfig, Topology};
use super::layer::Layer;
use super::lbn::LbnModel;
use super::trace::{ForwardPass, GateSource, GradAccumulator};
use super::{GatedNetwork, InputLayout, Parameterized};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Deterministic `max(0, W h + c)` stack with an affine output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluNet {
    config: ReluConfig,
    pub hidden: Vec<Layer>,
    pub output: Layer,
}

#[derive(Debug, Clone)]
pub struct ReluCache {
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
    last: Tensor,
}

impl ReluNet {
    pub fn new(config: &ReluConfig) -> Result<Self> {
        config.validate()?;
        let topo = &config.topology;
        let mut prev = topo.input_width();
        let mut hidden = Vec::new();
        for &w in &config.widths {
            hidden.push(topo.hidden_layer(prev, w, true));
            prev = w;
        }
        Ok(Self {
            config: config.clone(),
            hidden,
            output: topo.output_layer(prev),
        })
    }

    pub fn config(&self) -> &ReluConfig {
        &self.config
    }
}

/// Plain ReLU forward pass.
pub fn relu_forward(net: &ReluNet, x: &Tensor) -> Result<Tensor> {
    Ok(net.forward_pass(x, &mut GateSource::Mean)?.output)
}

/// The LBN whose MAP prediction is this ReLU network: each hidden layer
/// becomes a block with the same weight and a gating layer `σ(a)` (identity
/// weight, zero bias), so the MAP gate is `a >= 0` and `g ⊙ a = max(0, a)`.
/// LBN blocks carry no bias, so every hidden bias must be zero.
pub fn threshold_lbn(net: &ReluNet) -> Result<LbnModel> {
    if net
        .hidden
        .iter()
        .any(|l| l.bias.as_ref().is_some_and(|b| b.max_abs() != 0.0))
    {
        return Err(Error::Unsupported(
            "threshold construction needs zero hidden biases".into(),
        ));
    }
    let config = LbnConfig {
        topology: net.config.topology.clone(),
        widths: net.config.widths.clone(),
        gating_hidden: Vec::new(),
        gating_kernel: 1,
        gating_deep_kernel: 1,
        stochastic_hidden: false,
    };
    let mut lbn = LbnModel::new(&config)?;
    for (block, l) in lbn.blocks.iter_mut().zip(&net.hidden) {
        block.linear.weight = l.weight.clone();
        let gate = &mut block.gating.layers[0];
        let w = gate.weight.shape()[0];
        let data = gate.weight.data_mut();
        // Dense `[w, w]` and 1×1 conv `[w, w, 1, 1]` share this layout.
        for i in 0..w {
            data[i * w + i] = 1.0;
        }
    }
    lbn.output = net.output.clone();
    Ok(lbn)
}

impl Parameterized for ReluNet {
    fn parameters(&self) -> Vec<&Tensor> {
        self.hidden
            .iter()
            .chain(std::iter::once(&self.output))
            .flat_map(Layer::params)
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.hidden
            .iter_mut()
            .chain(std::iter::once(&mut self.output))
            .flat_map(Layer::params_mut)
            .collect()
    }

    fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .hidden
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.param_names(&format!("hidden{i}")))
            .collect();
        names.extend(self.output.param_names("output"));
        names
    }
}

impl GatedNetwork for ReluNet {
    type Cache = ReluCache;

    fn input_layout(&self) -> InputLayout {
        match self.config.topology {
            Topology::Dense { inputs, .. } => InputLayout::Dense(inputs),
            Topology::Conv { in_channels, .. } => InputLayout::Conv(in_channels),
        }
    }

    fn gated_layers(&self) -> usize {
        0
    }

    fn has_stochastic_hidden(&self) -> bool {
        false
    }

    fn forward_pass(&self, x: &Tensor, _source: &mut GateSource<'_>) -> Result<ForwardPass<ReluCache>> {
        let mut inputs = Vec::with_capacity(self.hidden.len());
        let mut pre = Vec::with_capacity(self.hidden.len());
        let mut h = x.clone();
        for l in &self.hidden {
            let z = l.forward(&h)?;
            let next: Vec<f64> = z.data().iter().map(|&v| v.max(0.0)).collect();
            inputs.push(std::mem::replace(&mut h, Tensor::from_parts(z.shape().to_vec(), next)));
            pre.push(z);
        }
        let output = self.output.forward(&h)?;
        Ok(ForwardPass {
            output,
            traces: Vec::new(),
            cache: ReluCache { inputs, pre, last: h },
        })
    }

    fn backward_pass(&self, cache: &ReluCache, d_output: &Tensor, acc: &mut GradAccumulator) -> Result<()> {
        let c = cache;
        let out_idx = 2 * self.hidden.len();
        self.output
            .accumulate_weight_grad(&c.last, d_output, acc.direct(out_idx))?;
        self.output.accumulate_bias_grad(d_output, acc.direct(out_idx + 1));
        let mut dh = self.output.input_grad(c.last.shape(), d_output)?;
        for (i, l) in self.hidden.iter().enumerate().rev() {
            for (d, &z) in dh.data_mut().iter_mut().zip(c.pre[i].data()) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
            l.accumulate_weight_grad(&c.inputs[i], &dh, acc.direct(2 * i))?;
            l.accumulate_bias_grad(&dh, acc.direct(2 * i + 1));
            if i > 0 {
                dh = l.input_grad(c.inputs[i].shape(), &dh)?;
            }
        }
        Ok(())
    }
}
