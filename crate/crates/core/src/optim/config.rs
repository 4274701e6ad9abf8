use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Toy,
    Denoise,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Task::Toy),
            "denoise" => Ok(Task::Denoise),
            other => Err(Error::Config(format!("unknown task `{other}` (toy|denoise)"))),
        }
    }
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Toy => "toy",
            Task::Denoise => "denoise",
        }
    }
}

/// Everything that determines a training run. Stored on disk as a flat
/// `key = value` file; `#` starts a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub preset: String,
    pub epochs: usize,
    /// Stop after this many minibatch steps even mid-epoch.
    pub max_steps: Option<usize>,
    /// Stop once this much wall time has elapsed. Makes runs depend on timing.
    pub max_wall_seconds: Option<f64>,
    pub batch_size: usize,
    pub k: usize,
    /// Samples per example when scoring validation log-likelihood.
    pub eval_k: usize,
    pub lr: f64,
    pub seed: u64,
    pub val_fraction: f64,
    /// Save a checkpoint every this many epochs; 0 keeps only best and final.
    pub checkpoint_every: usize,
    /// Rescale the gradient to at most this global norm. Off by default.
    pub grad_clip: Option<f64>,
    /// Fill the `wall_seconds` metric column; otherwise it is written as 0 so
    /// logs from identical runs are byte-identical.
    pub record_wall_time: bool,
    pub data_dir: Option<PathBuf>,
    pub toy_n: usize,
    pub patch_size: usize,
    pub patches: usize,
    pub sigma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::Toy,
            preset: "toy".into(),
            epochs: 20,
            max_steps: None,
            max_wall_seconds: None,
            batch_size: 32,
            k: 20,
            eval_k: 20,
            lr: 1e-3,
            seed: 0,
            val_fraction: 0.1,
            checkpoint_every: 0,
            grad_clip: None,
            record_wall_time: false,
            data_dir: None,
            toy_n: 10_000,
            patch_size: 16,
            patches: 50_000,
            sigma: 25.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "none" || value.is_empty() {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".into(), T::to_string)
}

impl TrainConfig {
    /// Defaults for a task: the toy regression or desk-scale denoising.
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Toy => Self::default(),
            Task::Denoise => Self {
                task,
                preset: "conv-desk".into(),
                epochs: 2,
                batch_size: 16,
                k: 1,
                eval_k: 1,
                ..Self::default()
            },
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "task" => self.task = value.parse()?,
            "preset" => self.preset = value.to_string(),
            "epochs" => self.epochs = parse(key, value)?,
            "max_steps" => self.max_steps = parse_opt(key, value)?,
            "max_wall_seconds" => self.max_wall_seconds = parse_opt(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "eval_k" => self.eval_k = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse_opt(key, value)?,
            "record_wall_time" => self.record_wall_time = parse(key, value)?,
            "data_dir" => self.data_dir = parse_opt(key, value)?,
            "toy_n" => self.toy_n = parse(key, value)?,
            "patch_size" => self.patch_size = parse(key, value)?,
            "patches" => self.patches = parse(key, value)?,
            "sigma" => self.sigma = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_kv(text)?;
        Ok(c)
    }

    /// Canonical text form, one key per line in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("task", self.task.name().into());
        put("preset", self.preset.clone());
        put("epochs", self.epochs.to_string());
        put("max_steps", show_opt(&self.max_steps));
        put("max_wall_seconds", show_opt(&self.max_wall_seconds));
        put("batch_size", self.batch_size.to_string());
        put("k", self.k.to_string());
        put("eval_k", self.eval_k.to_string());
        put("lr", self.lr.to_string());
        put("seed", self.seed.to_string());
        put("val_fraction", self.val_fraction.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("grad_clip", show_opt(&self.grad_clip));
        put("record_wall_time", self.record_wall_time.to_string());
        put(
            "data_dir",
            self.data_dir
                .as_ref()
                .map_or_else(|| "none".into(), |p| p.display().to_string()),
        );
        put("toy_n", self.toy_n.to_string());
        put("patch_size", self.patch_size.to_string());
        put("patches", self.patches.to_string());
        put("sigma", self.sigma.to_string());
        s
    }

    /// SHA-256 of [`TrainConfig::to_kv`], hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_kv().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.k < 1 || self.eval_k < 1 {
            return bad("k must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive and finite");
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be positive");
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return bad("grad_clip must be positive");
            }
        }
        if let Some(w) = self.max_wall_seconds {
            if w.is_nan() || w <= 0.0 {
                return bad("max_wall_seconds must be positive");
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be nonnegative");
        }
        if self.toy_n < 1 || self.patch_size < 1 || self.patches < 1 {
            return bad("dataset sizes must be positive");
        }
        Ok(())
    }
}
