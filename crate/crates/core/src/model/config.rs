//! Architecture descriptions. These are what checkpoints store to rebuild a
//! model before its parameters are filled in.

use super::Layer;
use crate::tensor::Padding;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Input/output layout shared by all three network families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "lowercase")]
pub enum Topology {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Same-padded convolutions, no pooling, so any image size is accepted.
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        output_kernel: usize,
    },
}

impl Topology {
    pub(crate) fn validate(&self) -> Result<()> {
        match *self {
            Topology::Dense { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err(Error::Config("dense topology needs nonzero inputs and outputs".into()));
                }
            }
            Topology::Conv {
                in_channels,
                out_channels,
                kernel,
                output_kernel,
            } => {
                if in_channels == 0 || out_channels == 0 {
                    return Err(Error::Config("conv topology needs nonzero channels".into()));
                }
                for k in [kernel, output_kernel] {
                    if k == 0 || k % 2 == 0 {
                        return Err(Error::Config(format!("conv kernels must be odd, got {k}")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, Topology::Conv { .. })
    }
}

/// Linearizing belief net: one block per entry of `widths`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbnConfig {
    pub topology: Topology,
    /// Units (dense) or channels (conv) per gated block.
    pub widths: Vec<usize>,
    /// Hidden widths of each block's gating network; empty means a single
    /// sigmoid layer `σ(W a + b)`.
    pub gating_hidden: Vec<usize>,
    /// Kernel of the first gating layer (conv only).
    pub gating_kernel: usize,
    /// Kernel of deeper gating layers (conv only).
    pub gating_deep_kernel: usize,
    /// Bernoulli-sample the gating network's hidden layers.
    pub stochastic_hidden: bool,
}

impl LbnConfig {
    pub fn dense(inputs: usize, widths: &[usize], outputs: usize, gating_hidden: &[usize]) -> Self {
        Self {
            topology: Topology::Dense { inputs, outputs },
            widths: widths.to_vec(),
            gating_hidden: gating_hidden.to_vec(),
            gating_kernel: 1,
            gating_deep_kernel: 1,
            stochastic_hidden: false,
        }
    }

    /// Full-size convolutional model: 128 kernels of 9×9 for linear and
    /// gating units, 4 gated layers, 3-layer gating functions.
    pub fn conv_paper() -> Self {
        Self {
            topology: Topology::Conv {
                in_channels: 1,
                out_channels: 1,
                kernel: 9,
                output_kernel: 9,
            },
            widths: vec![128; 4],
            gating_hidden: vec![128, 128],
            gating_kernel: 9,
            gating_deep_kernel: 1,
            stochastic_hidden: false,
        }
    }

    /// Desk-scale convolutional model: 16 kernels of 5×5, two gated layers,
    /// two-layer gating functions.
    pub fn conv_desk() -> Self {
        Self {
            topology: Topology::Conv {
                in_channels: 1,
                out_channels: 1,
                kernel: 5,
                output_kernel: 5,
            },
            widths: vec![16, 16],
            gating_hidden: vec![16],
            gating_kernel: 5,
            gating_deep_kernel: 1,
            stochastic_hidden: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        if self.widths.is_empty() {
            return Err(Error::Config("an LBN needs at least one gated block".into()));
        }
        if self.widths.iter().chain(&self.gating_hidden).any(|&w| w == 0) {
            return Err(Error::Config("zero-width layer".into()));
        }
        if self.topology.is_conv() {
            for k in [self.gating_kernel, self.gating_deep_kernel] {
                if k == 0 || k % 2 == 0 {
                    return Err(Error::Config(format!("gating kernels must be odd, got {k}")));
                }
            }
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let (input, output, k, ko, kg, kd) = match self.topology {
            Topology::Dense { inputs, outputs } => (inputs, outputs, 1, 1, 1, 1),
            Topology::Conv {
                in_channels,
                out_channels,
                kernel,
                output_kernel,
            } => (
                in_channels,
                out_channels,
                kernel * kernel,
                output_kernel * output_kernel,
                self.gating_kernel * self.gating_kernel,
                self.gating_deep_kernel * self.gating_deep_kernel,
            ),
        };
        let mut total = 0;
        let mut prev = input;
        for &w in &self.widths {
            total += prev * w * k;
            let mut g_prev = w;
            for (j, &g) in self.gating_hidden.iter().chain(std::iter::once(&w)).enumerate() {
                let ks = if j == 0 { kg } else { kd };
                total += g_prev * g * ks + g;
                g_prev = g;
            }
            prev = w;
        }
        total + prev * output * ko + output
    }
}

/// Deterministic ReLU regression network with biases on every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReluConfig {
    pub topology: Topology,
    pub widths: Vec<usize>,
}

/// Conditional sigmoid belief net: every hidden layer is binary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbnConfig {
    pub topology: Topology,
    pub widths: Vec<usize>,
}

fn validate_plain(topology: &Topology, widths: &[usize]) -> Result<()> {
    topology.validate()?;
    if widths.contains(&0) {
        return Err(Error::Config("zero-width layer".into()));
    }
    Ok(())
}

impl ReluConfig {
    pub fn validate(&self) -> Result<()> {
        validate_plain(&self.topology, &self.widths)
    }
}

impl SbnConfig {
    pub fn validate(&self) -> Result<()> {
        validate_plain(&self.topology, &self.widths)?;
        if self.widths.is_empty() {
            return Err(Error::Config("a C-SBN needs at least one binary layer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelSpec {
    Lbn(LbnConfig),
    Relu(ReluConfig),
    Sbn(SbnConfig),
}

pub const PRESETS: &[&str] = &[
    "toy",
    "toy-relu",
    "toy-csbn",
    "patch",
    "patch-relu",
    "patch-csbn",
    "conv-desk",
    "conv-paper",
    "conv-relu-desk",
    "conv-csbn-desk",
];

impl ModelSpec {
    /// Named architecture. `patch_size` sets the input of the dense patch
    /// presets and is ignored elsewhere.
    pub fn preset(name: &str, patch_size: usize) -> Result<Self> {
        let toy = Topology::Dense { inputs: 2, outputs: 1 };
        let pixels = patch_size * patch_size;
        let patch = Topology::Dense {
            inputs: pixels,
            outputs: pixels,
        };
        let desk = LbnConfig::conv_desk().topology;
        let spec = match name {
            "toy" => ModelSpec::Lbn(LbnConfig {
                stochastic_hidden: true,
                ..LbnConfig::dense(2, &[32], 1, &[32, 32])
            }),
            "toy-relu" => ModelSpec::Relu(ReluConfig {
                topology: toy,
                widths: vec![32, 32],
            }),
            "toy-csbn" => ModelSpec::Sbn(SbnConfig {
                topology: toy,
                widths: vec![32, 32],
            }),
            "patch" => ModelSpec::Lbn(LbnConfig::dense(pixels, &[256], pixels, &[256, 256])),
            "patch-relu" => ModelSpec::Relu(ReluConfig {
                topology: patch,
                widths: vec![256; 6],
            }),
            "patch-csbn" => ModelSpec::Sbn(SbnConfig {
                topology: patch,
                widths: vec![256; 6],
            }),
            "conv-desk" => ModelSpec::Lbn(LbnConfig::conv_desk()),
            "conv-paper" => ModelSpec::Lbn(LbnConfig::conv_paper()),
            "conv-relu-desk" => ModelSpec::Relu(ReluConfig {
                topology: desk,
                widths: vec![16; 4],
            }),
            "conv-csbn-desk" => ModelSpec::Sbn(SbnConfig {
                topology: desk,
                widths: vec![16; 4],
            }),
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}` (known: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Lbn(c) => c.validate(),
            ModelSpec::Relu(c) => c.validate(),
            ModelSpec::Sbn(c) => c.validate(),
        }
    }

    pub fn topology(&self) -> &Topology {
        match self {
            ModelSpec::Lbn(c) => &c.topology,
            ModelSpec::Relu(c) => &c.topology,
            ModelSpec::Sbn(c) => &c.topology,
        }
    }
}

impl Topology {
    /// Layer mapping `inputs → outputs` units (dense) or channels (conv).
    pub(crate) fn hidden_layer(&self, inputs: usize, outputs: usize, with_bias: bool) -> Layer {
        match *self {
            Topology::Dense { .. } => Layer::dense(inputs, outputs, with_bias),
            Topology::Conv { kernel, .. } => Layer::conv(inputs, outputs, kernel, Padding::Same, with_bias),
        }
    }

    pub(crate) fn output_layer(&self, inputs: usize) -> Layer {
        match *self {
            Topology::Dense { outputs, .. } => Layer::dense(inputs, outputs, true),
            Topology::Conv {
                out_channels,
                output_kernel,
                ..
            } => Layer::conv(inputs, out_channels, output_kernel, Padding::Same, true),
        }
    }

    pub(crate) fn input_width(&self) -> usize {
        match *self {
            Topology::Dense { inputs, .. } => inputs,
            Topology::Conv { in_channels, .. } => in_channels,
        }
    }
}
