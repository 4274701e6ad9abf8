//! Model files: a TOML manifest followed by the raw parameters.
//!
//! Layout: one ASCII line `LBNCKPT <n>\n`, then `n` bytes of UTF-8 TOML
//! manifest, then every parameter as little-endian `f64` in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{AnyModel, ModelSpec, Parameterized};
use crate::tensor::Tensor;
use crate::{write_atomic, Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "LBNCKPT";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: AnyModel,
    /// Preset name the model was built from, or `custom`.
    pub preset: String,
    pub task: String,
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    preset: String,
    task: String,
    seed: u64,
    config_digest: String,
    model: ModelSpec,
    params: Vec<ParamEntry>,
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let model = &ckpt.model;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        preset: ckpt.preset.clone(),
        task: ckpt.task.clone(),
        seed: ckpt.seed,
        config_digest: ckpt.config_digest.clone(),
        model: model.spec(),
        params: model
            .parameter_names()
            .into_iter()
            .zip(model.parameters())
            .map(|(name, p)| ParamEntry {
                name,
                shape: p.shape().to_vec(),
            })
            .collect(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
    let mut out = format!("{MAGIC} {}\n", text.len()).into_bytes();
    out.extend_from_slice(text.as_bytes());
    for p in model.parameters() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let len: usize = header
        .strip_prefix(MAGIC)
        .map(str::trim)
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Error::Checkpoint(format!("not a checkpoint header: `{header}`")))?;
    let start = nl + 1;
    let end = start
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint("manifest truncated".into()))?;
    let text =
        std::str::from_utf8(&bytes[start..end]).map_err(|_| Error::Checkpoint("manifest is not UTF-8".into()))?;

    #[derive(Deserialize)]
    struct Version {
        format_version: u32,
    }
    let version: Version = toml::from_str(text).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
    if version.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {} (this build reads version {FORMAT_VERSION})",
            version.format_version
        )));
    }
    let manifest: Manifest = toml::from_str(text).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;

    let mut model = AnyModel::from_spec(&manifest.model)?;
    let names = model.parameter_names();
    let expected_shapes: Vec<Vec<usize>> = model.parameters().iter().map(|p| p.shape().to_vec()).collect();
    if manifest.params.len() != names.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} parameters, architecture has {}",
            manifest.params.len(),
            names.len()
        )));
    }
    for ((entry, name), shape) in manifest.params.iter().zip(&names).zip(&expected_shapes) {
        if &entry.name != name || &entry.shape != shape {
            return Err(Error::Checkpoint(format!(
                "parameter `{}` {:?} does not match architecture `{name}` {shape:?}",
                entry.name, entry.shape
            )));
        }
    }
    let payload = &bytes[end..];
    let expected: usize = expected_shapes.iter().map(|s| s.iter().product::<usize>() * 8).sum();
    if payload.len() != expected {
        return Err(Error::Checkpoint(format!(
            "payload has {} bytes, manifest expects {expected} bytes",
            payload.len()
        )));
    }
    let mut chunks = payload.chunks_exact(8);
    for p in model.parameters_mut() {
        let data: Vec<f64> = chunks
            .by_ref()
            .take(p.len())
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        *p = Tensor::new(p.shape().to_vec(), data).map_err(|e| Error::Checkpoint(format!("payload: {e}")))?;
    }
    Ok(Checkpoint {
        model,
        preset: manifest.preset,
        task: manifest.task,
        seed: manifest.seed,
        config_digest: manifest.config_digest,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode(ckpt)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
