use super::layer::Layer;
use super::trace::{GateDraw, GateSource};
use crate::tensor::{sigmoid, Tensor};
use crate::Result;

/// Sigmoid network mapping a block's linear activations to gate rates.
///
/// Every layer is affine followed by a sigmoid. With hidden layers the rates
/// are `σ(W₂ σ(W₁ a + b₁) + b₂)` and so on; the last layer always has one
/// output per gated unit.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingNetwork {
    pub layers: Vec<Layer>,
    /// One flag per hidden layer (`layers.len() - 1` entries).
    pub stochastic_hidden: Vec<bool>,
}

#[derive(Debug, Clone)]
pub(crate) struct GatingCache {
    /// Input fed to each layer.
    inputs: Vec<Tensor>,
    /// Sigmoid output of each layer; the last one is the rate tensor.
    sig: Vec<Tensor>,
}

impl GatingNetwork {
    pub fn new(layers: Vec<Layer>, stochastic: bool) -> Self {
        let hidden = layers.len().saturating_sub(1);
        Self {
            layers,
            stochastic_hidden: vec![stochastic; hidden],
        }
    }

    pub fn has_stochastic_hidden(&self) -> bool {
        self.stochastic_hidden.iter().any(|&s| s)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, Layer::outputs)
    }

    /// Runs the network on linear activations `a` of gated layer `layer`.
    /// Returns the rates, draws of stochastic hidden layers, and the cache.
    pub(crate) fn forward(
        &self,
        layer: usize,
        a: &Tensor,
        source: &mut GateSource<'_>,
    ) -> Result<(Tensor, Vec<GateDraw>, GatingCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut sig = Vec::with_capacity(self.layers.len());
        let mut draws = Vec::new();
        let mut z = a.clone();
        let mut slot = 0;
        for (j, l) in self.layers.iter().enumerate() {
            let mut pre = l.forward(&z)?;
            for v in pre.data_mut() {
                *v = sigmoid(*v);
            }
            inputs.push(z);
            let is_hidden = j + 1 < self.layers.len();
            z = if is_hidden && self.stochastic_hidden[j] {
                let (value, draw) = source.hidden(layer, slot, &pre)?;
                slot += 1;
                draws.extend(draw);
                value
            } else {
                pre.clone()
            };
            sig.push(pre);
        }
        Ok((z, draws, GatingCache { inputs, sig }))
    }

    /// Backpropagates `d_rates` through the sigmoid layers, treating the
    /// residual of every stochastic hidden layer as a constant. Parameter
    /// gradients land in `acc` starting at `first_param`; returns the gradient
    /// with respect to the network input.
    pub(crate) fn backward(
        &self,
        cache: &GatingCache,
        d_rates: Tensor,
        acc: &mut super::GradAccumulator,
        first_param: usize,
    ) -> Result<Tensor> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut p = first_param;
        for l in &self.layers {
            offsets.push(p);
            p += l.param_len();
        }
        let mut dz = d_rates;
        for (j, l) in self.layers.iter().enumerate().rev() {
            let s = &cache.sig[j];
            let mut dpre = dz;
            for (d, &sv) in dpre.data_mut().iter_mut().zip(s.data()) {
                *d *= sv * (1.0 - sv);
            }
            let x = &cache.inputs[j];
            l.accumulate_weight_grad(x, &dpre, acc.direct(offsets[j]))?;
            if l.bias.is_some() {
                l.accumulate_bias_grad(&dpre, acc.direct(offsets[j] + 1));
            }
            dz = l.input_grad(x.shape(), &dpre)?;
        }
        Ok(dz)
    }
}
