//! Images, noise, PSNR, patch datasets, full-image inference, and the bimodal
//! toy regression set.

mod patches;
mod pnm;
mod synth;
mod toy;

pub use patches::{corrupt, denoising_dataset, extract_patches, split_by_image, NoiseSpec, PatchSet};
pub use pnm::{decode_pnm, encode_pgm, quantize, read_graymap, read_pnm, write_graymap, Pnm};
pub use synth::synthetic_images;
pub use toy::{
    toy_bimodal_dataset, toy_dataset, toy_features, toy_from_model, toy_to_model, ToySample, TOY_TARGET_SCALE,
};

use std::fmt::Write as _;
use std::str::FromStr;

use crate::model::{GateSource, GatedNetwork, InputLayout};
use crate::tensor::{Rng, Tensor};
use crate::{Error, Result};

/// Mean subtracted by [`preprocess`].
pub const PIXEL_MEAN: f64 = 0.5;
/// Divisor applied by [`preprocess`].
pub const PIXEL_SCALE: f64 = 0.2;
/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Single-channel image with pixels in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGray {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl ImageGray {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}×{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Format(format!("pixel {i} = {} outside [0, 1]", pixels[i])));
        }
        Ok(Self { height, width, pixels })
    }

    /// Clips every value into `[0, 1]`.
    pub fn from_clipped(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        Self::new(height, width, values.iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// `1 × h × w` tensor of the raw pixel values.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![1, self.height, self.width], self.pixels.clone())
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Shape(format!(
                "crop {height}×{width} at ({top}, {left}) exceeds {}×{}",
                self.height, self.width
            )));
        }
        let mut out = Vec::with_capacity(height * width);
        for r in top..top + height {
            out.extend_from_slice(&self.pixels[r * self.width + left..r * self.width + left + width]);
        }
        Ok(Self {
            height,
            width,
            pixels: out,
        })
    }
}

/// Interleaved multi-channel image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

/// Luma `0.299 R + 0.587 G + 0.114 B`.
pub fn to_gray(image: &ColorImage) -> Result<ImageGray> {
    if image.channels != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {}", image.channels)));
    }
    if image.data.len() != image.height * image.width * 3 {
        return Err(Error::Shape("color buffer length does not match its extents".into()));
    }
    let px = image
        .data
        .chunks_exact(3)
        .map(|c| (0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]).clamp(0.0, 1.0))
        .collect();
    ImageGray::new(image.height, image.width, px)
}

/// `(x − 0.5) / 0.2` elementwise.
pub fn preprocess(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|v| (v - PIXEL_MEAN) / PIXEL_SCALE).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Inverse of [`preprocess`] for a `1 × h × w` or `h × w` tensor, clipped to
/// `[0, 1]`.
pub fn deprocess(t: &Tensor) -> Result<ImageGray> {
    let (h, w) = match *t.shape() {
        [1, h, w] | [h, w] => (h, w),
        _ => return Err(Error::Shape(format!("cannot read {:?} as a graymap", t.shape()))),
    };
    let values: Vec<f64> = t.data().iter().map(|v| v * PIXEL_SCALE + PIXEL_MEAN).collect();
    ImageGray::from_clipped(h, w, &values)
}

fn mse(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64
}

/// `−10 log₁₀(MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(x: &ImageGray, y: &ImageGray) -> Result<f64> {
    if (x.height, x.width) != (y.height, y.width) {
        return Err(Error::Shape(format!(
            "{}×{} vs {}×{}",
            x.height, x.width, y.height, y.width
        )));
    }
    Ok(psnr_values(&x.pixels, &y.pixels))
}

/// PSNR of raw values on the `[0, 1]` scale; no clipping.
pub fn psnr_values(x: &[f64], y: &[f64]) -> f64 {
    let e = mse(x, y);
    if e == 0.0 {
        PSNR_CAP_DB
    } else {
        (-10.0 * e.log10()).min(PSNR_CAP_DB)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenoiseMode {
    Mean,
    Map,
    Sample,
}

impl FromStr for DenoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(DenoiseMode::Mean),
            "map" => Ok(DenoiseMode::Map),
            "sample" => Ok(DenoiseMode::Sample),
            other => Err(Error::Config(format!("unknown mode `{other}` (mean|map|sample)"))),
        }
    }
}

impl DenoiseMode {
    pub fn name(self) -> &'static str {
        match self {
            DenoiseMode::Mean => "mean",
            DenoiseMode::Map => "map",
            DenoiseMode::Sample => "sample",
        }
    }
}

/// Reshapes a `1 × h × w` tensor to the model's input layout.
pub fn fit_layout(x: Tensor, layout: InputLayout) -> Result<Tensor> {
    match layout {
        InputLayout::Conv(_) => Ok(x),
        InputLayout::Dense(n) => {
            if x.len() != n {
                return Err(Error::Shape(format!(
                    "dense model takes {n} pixels, image has {}",
                    x.len()
                )));
            }
            Ok(x.reshape(&[n])?)
        }
    }
}

/// The effective mode: mean needs at most one gated layer and is replaced by
/// sampling otherwise.
pub fn effective_mode<N: GatedNetwork>(model: &N, mode: DenoiseMode) -> DenoiseMode {
    if mode == DenoiseMode::Mean && model.gated_layers() > 1 {
        DenoiseMode::Sample
    } else {
        mode
    }
}

/// Denoises `noisy` (pixel scale `[0, 1]`, unclipped) in the given mode.
/// Sample mode returns `n_samples` images; mean and map return one. Mean on
/// a model with more than one gated layer falls back to a single sample with
/// a warning (logged once per process).
pub fn denoise_image<N: GatedNetwork>(
    model: &N,
    noisy: &Tensor,
    mode: DenoiseMode,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<Vec<ImageGray>> {
    let (h, w) = match *noisy.shape() {
        [1, h, w] | [h, w] => (h, w),
        _ => return Err(Error::Shape(format!("noisy image has shape {:?}", noisy.shape()))),
    };
    let x = fit_layout(preprocess(noisy).reshape(&[1, h, w])?, model.input_layout())?;
    let eff = effective_mode(model, mode);
    if eff != mode {
        static WARNED: std::sync::Once = std::sync::Once::new();
        WARNED.call_once(|| {
            log::warn!(
                "mean prediction is exact only with one gated layer; drawing a sample instead ({} layers)",
                model.gated_layers()
            )
        });
    }
    let predict = |source: &mut GateSource<'_>| -> Result<ImageGray> {
        let out = model.forward_pass(&x, source)?.output;
        deprocess(&out.reshape(&[1, h, w])?)
    };
    match (mode, eff) {
        (_, DenoiseMode::Mean) => Ok(vec![predict(&mut GateSource::Mean)?]),
        (_, DenoiseMode::Map) => Ok(vec![predict(&mut GateSource::Map)?]),
        (DenoiseMode::Mean, DenoiseMode::Sample) => Ok(vec![predict(&mut GateSource::Sample(rng))?]),
        _ => {
            if n_samples < 1 {
                return Err(Error::Config("sample mode needs at least one sample".into()));
            }
            (0..n_samples).map(|_| predict(&mut GateSource::Sample(rng))).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsnrRow {
    pub image: String,
    pub sigma: f64,
    pub mode: String,
    pub psnr_db: f64,
}

pub fn psnr_csv(rows: &[PsnrRow]) -> String {
    let mut s = String::from("image,sigma,mode,psnr_db\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.image, r.sigma, r.mode, r.psnr_db);
    }
    s
}
