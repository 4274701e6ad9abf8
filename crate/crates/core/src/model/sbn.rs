use super::config::{SbnConfig, Topology};
use super::layer::Layer;
use super::trace::{ForwardPass, GateSource, GateTrace, GradAccumulator};
use super::{GatedNetwork, InputLayout, Parameterized};
use crate::tensor::{sigmoid, Rng, Tensor};
use crate::Result;

/// Conditional sigmoid belief net: `h_l ~ Bernoulli(σ(W_l h_{l-1} + c_l))`
/// with binary values passed forward and an affine map on the last binary
/// layer. Given its gates the output does not depend on `x` at all.
#[derive(Debug, Clone, PartialEq)]
pub struct SbnNet {
    config: SbnConfig,
    pub hidden: Vec<Layer>,
    pub output: Layer,
}

#[derive(Debug, Clone)]
pub struct SbnCache {
    inputs: Vec<Tensor>,
    rates: Vec<Tensor>,
    last: Tensor,
}

impl SbnNet {
    pub fn new(config: &SbnConfig) -> Result<Self> {
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

    pub fn config(&self) -> &SbnConfig {
        &self.config
    }
}

/// One stochastic forward pass of a C-SBN.
pub fn sbn_forward(net: &SbnNet, x: &Tensor, rng: &mut Rng) -> Result<(Tensor, Vec<GateTrace>)> {
    let pass = net.forward_pass(x, &mut GateSource::Sample(rng))?;
    Ok((pass.output, pass.traces))
}

impl Parameterized for SbnNet {
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
            .flat_map(|(i, l)| l.param_names(&format!("binary{i}")))
            .collect();
        names.extend(self.output.param_names("output"));
        names
    }
}

impl GatedNetwork for SbnNet {
    type Cache = SbnCache;

    fn input_layout(&self) -> InputLayout {
        match self.config.topology {
            Topology::Dense { inputs, .. } => InputLayout::Dense(inputs),
            Topology::Conv { in_channels, .. } => InputLayout::Conv(in_channels),
        }
    }

    fn gated_layers(&self) -> usize {
        self.hidden.len()
    }

    fn has_stochastic_hidden(&self) -> bool {
        false
    }

    fn forward_pass(&self, x: &Tensor, source: &mut GateSource<'_>) -> Result<ForwardPass<SbnCache>> {
        let mut inputs = Vec::with_capacity(self.hidden.len());
        let mut rates = Vec::with_capacity(self.hidden.len());
        let mut traces = Vec::with_capacity(self.hidden.len());
        let mut h = x.clone();
        for (l, layer) in self.hidden.iter().enumerate() {
            let mut r = layer.forward(&h)?;
            for v in r.data_mut() {
                *v = sigmoid(*v);
            }
            let draw = source.gate(l, r.clone())?;
            inputs.push(std::mem::replace(&mut h, draw.gates.clone()));
            rates.push(r);
            traces.push(GateTrace {
                gates: draw,
                hidden: Vec::new(),
            });
        }
        let output = self.output.forward(&h)?;
        Ok(ForwardPass {
            output,
            traces,
            cache: SbnCache { inputs, rates, last: h },
        })
    }

    fn backward_pass(&self, cache: &SbnCache, d_output: &Tensor, acc: &mut GradAccumulator) -> Result<()> {
        let c = cache;
        let out_idx = 2 * self.hidden.len();
        self.output
            .accumulate_weight_grad(&c.last, d_output, acc.direct(out_idx))?;
        self.output.accumulate_bias_grad(d_output, acc.direct(out_idx + 1));
        let mut dh = self.output.input_grad(c.last.shape(), d_output)?;
        for (i, l) in self.hidden.iter().enumerate().rev() {
            // h = σ(z) + ε with ε held fixed.
            for (d, &s) in dh.data_mut().iter_mut().zip(c.rates[i].data()) {
                *d *= s * (1.0 - s);
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
