//! Gate draws, their provenance, and gradient accumulation buffers.

use crate::tensor::{Rng, Tensor};
use crate::{Error, Result};

/// One layer of binary units written as `gates = rates + residuals`.
///
/// For a Bernoulli draw the residual is `1 - rate` when the gate fired and
/// `-rate` otherwise. Holding the residual fixed while the rates move gives
/// the frozen-noise surrogate the gradient estimator differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct GateDraw {
    pub rates: Tensor,
    pub gates: Tensor,
    pub residuals: Tensor,
}

impl GateDraw {
    pub(crate) fn from_gates(rates: Tensor, gates: Tensor) -> Self {
        let residuals: Vec<f64> = gates.data().iter().zip(rates.data()).map(|(g, r)| g - r).collect();
        let residuals = Tensor::from_parts(rates.shape().to_vec(), residuals);
        Self {
            rates,
            gates,
            residuals,
        }
    }

    pub(crate) fn from_residuals(rates: Tensor, residuals: Tensor) -> Result<Self> {
        if rates.shape() != residuals.shape() {
            return Err(Error::TraceMismatch(format!(
                "residual shape {:?} vs rate shape {:?}",
                residuals.shape(),
                rates.shape()
            )));
        }
        let gates: Vec<f64> = rates.data().iter().zip(residuals.data()).map(|(r, e)| r + e).collect();
        let gates = Tensor::from_parts(rates.shape().to_vec(), gates);
        Ok(Self {
            rates,
            gates,
            residuals,
        })
    }
}

/// Everything sampled for one gated layer: its gates plus any stochastic
/// hidden layers of the gating network, in forward order.
#[derive(Debug, Clone, PartialEq)]
pub struct GateTrace {
    pub gates: GateDraw,
    pub hidden: Vec<GateDraw>,
}

impl GateTrace {
    /// Total number of binary units recorded (gates plus stochastic hiddens).
    pub fn unit_count(&self) -> usize {
        self.gates.gates.len() + self.hidden.iter().map(|d| d.gates.len()).sum::<usize>()
    }
}

/// Where gate values come from during a forward pass.
pub enum GateSource<'a> {
    /// Bernoulli draws for gates and for stochastic gating hiddens.
    Sample(&'a mut Rng),
    /// Gates set to their rates; gating hiddens stay deterministic.
    Mean,
    /// Gates (and stochastic hiddens) hard-thresholded: `rate >= 0.5` fires.
    Map,
    /// Residuals taken from earlier traces; gates become `rates + residuals`.
    Replay(&'a [GateTrace]),
    /// Gate values given explicitly per gated layer; gating hiddens stay
    /// deterministic. Layers past the end of the slice behave as `Mean`.
    Pinned(&'a [Tensor]),
}

impl GateSource<'_> {
    pub(crate) fn gate(&mut self, layer: usize, rates: Tensor) -> Result<GateDraw> {
        match self {
            GateSource::Sample(rng) => {
                let gates = rates.data().iter().map(|&p| rng.bernoulli(p)).collect();
                let gates = Tensor::from_parts(rates.shape().to_vec(), gates);
                Ok(GateDraw::from_gates(rates, gates))
            }
            GateSource::Mean => {
                let gates = rates.clone();
                let residuals = Tensor::zeros(rates.shape());
                Ok(GateDraw {
                    rates,
                    gates,
                    residuals,
                })
            }
            GateSource::Map => Ok(GateDraw::from_gates(rates.clone(), threshold(&rates))),
            GateSource::Replay(traces) => {
                let trace = traces
                    .get(layer)
                    .ok_or_else(|| Error::TraceMismatch(format!("no trace for gated layer {layer}")))?;
                GateDraw::from_residuals(rates, trace.gates.residuals.clone())
            }
            GateSource::Pinned(gates) => {
                let Some(g) = gates.get(layer) else {
                    return GateSource::Mean.gate(layer, rates);
                };
                if g.shape() != rates.shape() {
                    return Err(Error::Shape(format!(
                        "pinned gates {:?} vs rates {:?} at layer {layer}",
                        g.shape(),
                        rates.shape()
                    )));
                }
                Ok(GateDraw::from_gates(rates, g.clone()))
            }
        }
    }

    /// Value passed on from a stochastic gating hidden layer with sigmoid
    /// output `s`. Returns the draw when this source samples hiddens.
    pub(crate) fn hidden(&mut self, layer: usize, slot: usize, s: &Tensor) -> Result<(Tensor, Option<GateDraw>)> {
        match self {
            GateSource::Sample(rng) => {
                let gates = s.data().iter().map(|&p| rng.bernoulli(p)).collect();
                let draw = GateDraw::from_gates(s.clone(), Tensor::from_parts(s.shape().to_vec(), gates));
                Ok((draw.gates.clone(), Some(draw)))
            }
            GateSource::Map => {
                let draw = GateDraw::from_gates(s.clone(), threshold(s));
                Ok((draw.gates.clone(), Some(draw)))
            }
            GateSource::Replay(traces) => {
                let draw = traces
                    .get(layer)
                    .and_then(|t| t.hidden.get(slot))
                    .ok_or_else(|| Error::TraceMismatch(format!("no hidden draw {slot} for gated layer {layer}")))?;
                let draw = GateDraw::from_residuals(s.clone(), draw.residuals.clone())?;
                Ok((draw.gates.clone(), Some(draw)))
            }
            GateSource::Mean | GateSource::Pinned(_) => Ok((s.clone(), None)),
        }
    }
}

/// MAP gate: fires when `rate >= 0.5`, so an exact tie resolves to 1.
pub fn threshold(rates: &Tensor) -> Tensor {
    let data = rates.data().iter().map(|&r| if r >= 0.5 { 1.0 } else { 0.0 }).collect();
    Tensor::from_parts(rates.shape().to_vec(), data)
}

/// Output of a forward pass together with its gate record and whatever the
/// network needs to run backward.
#[derive(Debug, Clone)]
pub struct ForwardPass<C> {
    pub output: Tensor,
    pub traces: Vec<GateTrace>,
    pub cache: C,
}

/// Per-parameter gradients, aligned with `Parameterized::parameters`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Tensor>);

impl Grads {
    pub fn flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, t| m.max(t.max_abs()))
    }
}

/// Gradient buffers. Linear weights of gated blocks keep their gating-path
/// contribution in a separate buffer until [`GradAccumulator::finish`], so the
/// two paths can be inspected on their own.
#[derive(Debug, Clone)]
pub struct GradAccumulator {
    direct: Vec<Tensor>,
    gating: Vec<Option<Tensor>>,
}

impl GradAccumulator {
    pub fn zeros_like(params: &[&Tensor]) -> Self {
        Self {
            direct: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            gating: vec![None; params.len()],
        }
    }

    pub(crate) fn direct(&mut self, index: usize) -> &mut Tensor {
        &mut self.direct[index]
    }

    pub(crate) fn gating(&mut self, index: usize) -> &mut Tensor {
        let shape = self.direct[index].shape().to_vec();
        self.gating[index].get_or_insert_with(|| Tensor::zeros(&shape))
    }

    /// Split view of one parameter: the direct (multiplicative) part and the
    /// gating-path part, if any was recorded.
    pub fn paths(&self, index: usize) -> (&Tensor, Option<&Tensor>) {
        (&self.direct[index], self.gating[index].as_ref())
    }

    pub fn len(&self) -> usize {
        self.direct.len()
    }

    pub fn is_empty(&self) -> bool {
        self.direct.is_empty()
    }

    /// Total gradient: `direct + gating` wherever a gating part exists.
    pub fn finish(self) -> Grads {
        let out = self
            .direct
            .into_iter()
            .zip(self.gating)
            .map(|(mut d, g)| {
                if let Some(g) = g {
                    for (a, b) in d.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                d
            })
            .collect();
        Grads(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn sampled_draws_satisfy_gate_identity(rates in proptest::collection::vec(0.0f64..=1.0, 1..64), seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let rates = Tensor::vector(rates).unwrap();
            let draw = GateSource::Sample(&mut rng).gate(0, rates).unwrap();
            for i in 0..draw.rates.len() {
                let (r, g, e) = (draw.rates.data()[i], draw.gates.data()[i], draw.residuals.data()[i]);
                prop_assert!(g == 0.0 || g == 1.0);
                prop_assert_eq!(r + e, g);
                prop_assert!(e == 1.0 - r || e == -r);
            }
        }

        #[test]
        fn replay_reproduces_sampled_gates(rates in proptest::collection::vec(0.0f64..=1.0, 1..64), seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let rates = Tensor::vector(rates).unwrap();
            let draw = GateSource::Sample(&mut rng).gate(0, rates.clone()).unwrap();
            let trace = [GateTrace { gates: draw.clone(), hidden: vec![] }];
            let again = GateSource::Replay(&trace).gate(0, rates).unwrap();
            prop_assert_eq!(again, draw);
        }
    }

    #[test]
    fn map_tie_fires() {
        let rates = Tensor::vector(vec![0.6, 0.4, 0.5]).unwrap();
        assert_eq!(threshold(&rates).data(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn finish_adds_gating_part() {
        let p = Tensor::zeros(&[2]);
        let mut acc = GradAccumulator::zeros_like(&[&p]);
        acc.direct(0).data_mut()[0] = 1.0;
        acc.gating(0).data_mut()[1] = 2.0;
        assert_eq!(acc.finish().0[0].data(), &[1.0, 2.0]);
    }
}
