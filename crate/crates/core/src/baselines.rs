//! ReLU and conditional SBN baselines, trained with the same loop as LBNs.
//!
//! The ReLU network is deterministic, so its mixture loss with `k = 1` is
//! squared error plus a constant. The C-SBN uses the mixture loss with
//! `config.k` samples, like an LBN.

use std::str::FromStr;

use crate::model::{AnyModel, ModelSpec};
use crate::optim::{init_model, train, Dataset, TrainConfig, TrainOutcome};
use crate::tensor::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Relu,
    Csbn,
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(BaselineKind::Relu),
            "csbn" => Ok(BaselineKind::Csbn),
            other => Err(Error::Config(format!("unknown baseline `{other}` (relu|csbn)"))),
        }
    }
}

/// Baseline preset matching an LBN preset's task and scale. Baseline preset
/// names map to themselves when the family agrees.
pub fn baseline_preset(kind: BaselineKind, preset: &str) -> Result<String> {
    let (relu, csbn) = match preset {
        "toy" | "toy-relu" | "toy-csbn" => ("toy-relu", "toy-csbn"),
        "patch" | "patch-relu" | "patch-csbn" => ("patch-relu", "patch-csbn"),
        "conv-desk" | "conv-relu-desk" | "conv-csbn-desk" => ("conv-relu-desk", "conv-csbn-desk"),
        other => return Err(Error::Config(format!("no baseline counterpart for preset `{other}`"))),
    };
    Ok(match kind {
        BaselineKind::Relu => relu,
        BaselineKind::Csbn => csbn,
    }
    .to_string())
}

/// Initializes and trains a baseline. `config.preset` may name an LBN preset
/// or a baseline preset; the matching baseline architecture is used.
pub fn train_baseline(
    kind: BaselineKind,
    config: &TrainConfig,
    data: &Dataset,
    validate: &mut dyn FnMut(&AnyModel) -> Result<f64>,
) -> Result<TrainOutcome<AnyModel>> {
    let preset = baseline_preset(kind, &config.preset)?;
    let patch = config.patch_size;
    let spec = ModelSpec::preset(&preset, patch)?;
    let mut config = config.clone();
    config.preset = preset;
    if kind == BaselineKind::Relu {
        config.k = 1;
    }
    let model = init_model(
        &spec,
        &mut Rng::with_stream(config.seed, crate::experiment::INIT_STREAM),
    )?;
    train(model, &config, data, validate, None)
}
