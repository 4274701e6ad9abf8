//! Linearizing belief nets.
//!
//! A linearizing belief net (LBN) is a deep linear network whose units are
//! switched on or off by stochastic binary gates. The gate rates come from a
//! small sigmoid network that reads the block's own linear activations, so the
//! model is a mixture of exponentially many linear experts sharing parameters.
//! Training maximizes a Monte Carlo estimate of the conditional mixture
//! likelihood; gradients flow through the gate rates with the sampled
//! residual held fixed.
//!
//! Module map:
//!
//! * [`tensor`]: dense `f64` arrays, convolution, deterministic RNG.
//! * [`model`]: LBN blocks and gating networks, plus ReLU and conditional SBN
//!   baselines sharing the same forward/backward interface.
//! * [`likelihood`]: the Monte Carlo mixture objective, its gradient, and an
//!   exact enumeration oracle for small gate counts.
//! * [`optim`]: Glorot initialization, Adam, the training loop.
//! * [`denoise`]: graymap I/O, patches, noise, PSNR, full-image inference and
//!   the bimodal toy regression set.
//! * [`baselines`]: training entry points for the ReLU and C-SBN baselines.
//! * [`experiment`]: end-to-end task runners shared by the CLI and tests.
//! * [`checkpoint`]: manifest plus little-endian payload serialization.

pub mod baselines;
pub mod checkpoint;
pub mod denoise;
pub mod experiment;
pub mod likelihood;
pub mod model;
pub mod optim;
pub mod tensor;

use std::io::Write as _;
use std::path::{Path, PathBuf};

pub use model::{AnyModel, GateSource, GateTrace, GatedNetwork, LbnModel, Parameterized};
pub use tensor::{Rng, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("trace does not match model or report: {0}")]
    TraceMismatch(String),
    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("image format: {0}")]
    Format(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Writes `bytes` to a temporary sibling of `path` and renames it into place,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
