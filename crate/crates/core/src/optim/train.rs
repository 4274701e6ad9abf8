use std::fmt::Write as _;
use std::time::Instant;

use super::{adam_step, AdamState, TrainConfig};
use crate::likelihood::sample_and_accumulate;
use crate::model::{GatedNetwork, Grads};
use crate::tensor::{Rng, Tensor};
use crate::{Error, Result};

/// Learning rates tried by [`grid_search`] unless told otherwise.
pub const DEFAULT_LR_GRID: [f64; 3] = [1e-3, 1e-4, 1e-5];

const SHUFFLE_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;

/// Paired inputs and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Tensor>,
    pub targets: Vec<Tensor>,
}

impl Dataset {
    pub fn new(inputs: Vec<Tensor>, targets: Vec<Tensor>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Moves the last `n` pairs into a new set.
    pub fn split_off(&mut self, n: usize) -> Dataset {
        let at = self.len().saturating_sub(n);
        Dataset {
            inputs: self.inputs.split_off(at),
            targets: self.targets.split_off(at),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_metric: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricLog {
    pub rows: Vec<MetricRow>,
}

impl MetricLog {
    pub const HEADER: &'static str = "epoch,train_nll,val_metric,wall_seconds";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_nll, r.val_metric, r.wall_seconds);
        }
        s
    }

    /// Row with the highest validation metric; the earliest on ties.
    pub fn best(&self) -> Option<&MetricRow> {
        self.rows.iter().fold(None, |best: Option<&MetricRow>, r| match best {
            Some(b) if b.val_metric >= r.val_metric => Some(b),
            _ => Some(r),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<N> {
    /// Parameters from the epoch with the best validation metric.
    pub best: N,
    pub best_epoch: usize,
    pub best_metric: f64,
    /// Parameters after the last step.
    pub last: N,
    pub log: MetricLog,
    pub steps: usize,
}

fn clip(grads: &mut Grads, max_norm: f64) {
    let norm = grads.0.iter().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in &mut grads.0 {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }
}

/// Called with the epoch number and the model after each epoch.
pub type EpochCallback<'a, N> = Option<&'a mut dyn FnMut(usize, &N) -> Result<()>>;

/// Minibatch Adam on the mean per-example `−log p̂(y|x)` with `config.k`
/// samples. `validate` scores the model after every epoch (higher is better)
/// and the best-scoring parameters are kept. `on_epoch` sees the model after
/// each epoch, for periodic checkpoints.
pub fn train<N: GatedNetwork + Clone>(
    mut model: N,
    config: &TrainConfig,
    data: &Dataset,
    validate: &mut dyn FnMut(&N) -> Result<f64>,
    mut on_epoch: EpochCallback<'_, N>,
) -> Result<TrainOutcome<N>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let start = Instant::now();
    let mut shuffle_rng = Rng::with_stream(config.seed, SHUFFLE_STREAM);
    let mut sample_rng = Rng::with_stream(config.seed, SAMPLE_STREAM);
    let mut adam = AdamState::new(&model.parameters(), config.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = MetricLog::default();
    let mut best: Option<(N, usize, f64)> = None;
    let mut step = 0usize;
    let out_of_time = |start: &Instant| {
        config
            .max_wall_seconds
            .is_some_and(|w| start.elapsed().as_secs_f64() >= w)
    };

    for epoch in 1..=config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut nll_sum = 0.0;
        let mut seen = 0usize;
        let mut stopped = false;
        for batch in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| step >= m) || out_of_time(&start) {
                stopped = true;
                break;
            }
            let scale = 1.0 / batch.len() as f64;
            let mut acc = model.zero_grads();
            for &i in batch {
                let report = sample_and_accumulate(
                    &model,
                    &data.inputs[i],
                    &data.targets[i],
                    config.k,
                    &mut sample_rng,
                    scale,
                    &mut acc,
                )?;
                if !report.log_likelihood.is_finite() {
                    return Err(Error::Divergence {
                        step,
                        reason: format!("non-finite loss on example {i}"),
                    });
                }
                nll_sum -= report.log_likelihood;
                seen += 1;
            }
            let mut grads = acc.finish();
            if let Some(c) = config.grad_clip {
                clip(&mut grads, c);
            }
            adam_step(&mut adam, model.parameters_mut(), &grads).map_err(|e| match e {
                Error::Divergence { reason, .. } => Error::Divergence { step, reason },
                other => other,
            })?;
            step += 1;
        }
        if seen == 0 {
            break;
        }
        let val = validate(&model)?;
        let wall = if config.record_wall_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        log.rows.push(MetricRow {
            epoch,
            train_nll: nll_sum / seen as f64,
            val_metric: val,
            wall_seconds: wall,
        });
        log::info!("epoch {epoch}: train_nll {:.5} val {:.5}", nll_sum / seen as f64, val);
        if best.as_ref().is_none_or(|b| val > b.2) {
            best = Some((model.clone(), epoch, val));
        }
        if let Some(hook) = on_epoch.as_mut() {
            hook(epoch, &model)?;
        }
        if stopped {
            break;
        }
    }
    let (best, best_epoch, best_metric) =
        best.ok_or_else(|| Error::Config("training stopped before the first step".into()))?;
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_metric,
        last: model,
        log,
        steps: step,
    })
}

/// Runs `run` for every learning rate and keeps the outcome with the best
/// validation metric; earlier rates win ties.
pub fn grid_search<N>(
    lrs: &[f64],
    mut run: impl FnMut(f64) -> Result<TrainOutcome<N>>,
) -> Result<(f64, TrainOutcome<N>)> {
    let mut best: Option<(f64, TrainOutcome<N>)> = None;
    for &lr in lrs {
        let outcome = run(lr)?;
        if best.as_ref().is_none_or(|(_, b)| outcome.best_metric > b.best_metric) {
            best = Some((lr, outcome));
        }
    }
    best.ok_or_else(|| Error::Config("empty learning-rate grid".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let log = MetricLog {
            rows: vec![MetricRow {
                epoch: 1,
                train_nll: 0.5,
                val_metric: -1.25,
                wall_seconds: 0.0,
            }],
        };
        assert_eq!(log.to_csv(), "epoch,train_nll,val_metric,wall_seconds\n1,0.5,-1.25,0\n");
    }

    #[test]
    fn best_prefers_earliest_tie() {
        let row = |epoch, val_metric| MetricRow {
            epoch,
            train_nll: 0.0,
            val_metric,
            wall_seconds: 0.0,
        };
        let log = MetricLog {
            rows: vec![row(1, 1.0), row(2, 3.0), row(3, 3.0)],
        };
        assert_eq!(log.best().unwrap().epoch, 2);
    }

    #[test]
    fn split_off_takes_tail() {
        let v = |x: f64| Tensor::vector(vec![x]).unwrap();
        let mut d = Dataset::new(vec![v(1.0), v(2.0), v(3.0)], vec![v(1.0), v(2.0), v(3.0)]).unwrap();
        let tail = d.split_off(1);
        assert_eq!((d.len(), tail.len()), (2, 1));
        assert_eq!(tail.inputs[0].data(), &[3.0]);
        assert!(Dataset::new(vec![v(1.0)], vec![]).is_err());
    }
}
