//! End-to-end runs of the toy regression and denoising tasks. The CLI and the
//! acceptance suite both go through these so their numbers agree.

use std::path::Path;
use std::str::FromStr;

use crate::baselines::{baseline_preset, BaselineKind};
use crate::denoise::{
    corrupt, denoise_image, denoising_dataset, effective_mode, extract_patches, fit_layout, preprocess, psnr,
    psnr_values, read_graymap, split_by_image, synthetic_images, toy_bimodal_dataset, toy_dataset, DenoiseMode,
    ImageGray, NoiseSpec, PsnrRow, ToySample,
};
use crate::likelihood::mc_log_likelihood;
use crate::model::{AnyModel, GatedNetwork, ModelSpec};
use crate::optim::{init_model, train, Dataset, EpochCallback, TrainConfig, TrainOutcome};
use crate::tensor::{Rng, Tensor};
use crate::{Error, Result};

/// Stream ids under the run seed. Training itself uses streams 1 and 2.
pub const INIT_STREAM: u64 = 10;
pub const DATA_STREAM: u64 = 11;
pub const EVAL_STREAM: u64 = 12;
pub const NOISE_STREAM: u64 = 13;
pub const TEST_STREAM: u64 = 14;
pub const TEST_EVAL_STREAM: u64 = 15;

/// Synthetic corpus used when no image directory is configured.
pub const SYNTH_IMAGES: usize = 24;
pub const SYNTH_SIZE: usize = 256;
/// Held-out fractions of whole images.
pub const TEST_IMAGE_FRACTION: f64 = 0.2;
pub const VAL_IMAGE_FRACTION: f64 = 0.1;
/// Most validation patches scored per epoch.
pub const MAX_VAL_PATCHES: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Lbn,
    Relu,
    Csbn,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lbn" => Ok(Family::Lbn),
            "relu" => Ok(Family::Relu),
            "csbn" => Ok(Family::Csbn),
            other => Err(Error::Config(format!("unknown model family `{other}` (lbn|relu|csbn)"))),
        }
    }
}

impl Family {
    /// Preset and effective training config for this family.
    pub fn resolve(self, config: &TrainConfig) -> Result<(String, TrainConfig)> {
        let mut config = config.clone();
        let preset = match self {
            Family::Lbn => config.preset.clone(),
            Family::Relu => {
                config.k = 1;
                baseline_preset(BaselineKind::Relu, &config.preset)?
            }
            Family::Csbn => baseline_preset(BaselineKind::Csbn, &config.preset)?,
        };
        config.preset = preset.clone();
        Ok((preset, config))
    }
}

pub fn build_model(preset: &str, config: &TrainConfig) -> Result<AnyModel> {
    let spec = ModelSpec::preset(preset, config.patch_size)?;
    init_model(&spec, &mut Rng::with_stream(config.seed, INIT_STREAM))
}

/// Mean over `data` of the `k`-sample log-likelihood estimate.
pub fn mean_log_likelihood<N: GatedNetwork>(model: &N, data: &Dataset, k: usize, rng: &mut Rng) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("empty evaluation set".into()));
    }
    let mut total = 0.0;
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        total += mc_log_likelihood(model, x, y, k, rng)?.0.log_likelihood;
    }
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone)]
pub struct ToySplits {
    pub train: Vec<ToySample>,
    pub val: Vec<ToySample>,
    pub test: Vec<ToySample>,
}

/// `toy_n` samples split into training and validation, plus an independent
/// test set a fifth that size.
pub fn toy_splits(config: &TrainConfig) -> Result<ToySplits> {
    let mut all = toy_bimodal_dataset(config.toy_n, &mut Rng::with_stream(config.seed, DATA_STREAM))?;
    let n_val = ((config.toy_n as f64) * config.val_fraction).round() as usize;
    let val = all.split_off(all.len() - n_val.min(all.len() - 1));
    let test = toy_bimodal_dataset(
        (config.toy_n / 5).max(1),
        &mut Rng::with_stream(config.seed, TEST_STREAM),
    )?;
    Ok(ToySplits { train: all, val, test })
}

#[derive(Debug, Clone)]
pub struct ToyRun {
    pub outcome: TrainOutcome<AnyModel>,
    /// Mean held-out log-likelihood of the best model, in model units.
    pub test_log_likelihood: f64,
}

pub type EpochHook<'a> = EpochCallback<'a, AnyModel>;

pub fn run_toy(family: Family, config: &TrainConfig, on_epoch: EpochHook<'_>) -> Result<ToyRun> {
    let (preset, config) = family.resolve(config)?;
    let splits = toy_splits(&config)?;
    let train_set = toy_dataset(&splits.train);
    let val_set = toy_dataset(&splits.val);
    let test_set = toy_dataset(&splits.test);
    let model = build_model(&preset, &config)?;
    let eval_k = config.eval_k;
    let seed = config.seed;
    let mut validate = |m: &AnyModel| {
        if val_set.is_empty() {
            return Ok(0.0);
        }
        mean_log_likelihood(m, &val_set, eval_k, &mut Rng::with_stream(seed, EVAL_STREAM))
    };
    let outcome = train(model, &config, &train_set, &mut validate, on_epoch)?;
    let test_log_likelihood = mean_log_likelihood(
        &outcome.best,
        &test_set,
        eval_k,
        &mut Rng::with_stream(seed, TEST_EVAL_STREAM),
    )?;
    Ok(ToyRun {
        outcome,
        test_log_likelihood,
    })
}

/// Every `.pgm`, `.ppm` or `.pnm` file in `dir`, in name order.
pub fn load_images(dir: &Path) -> Result<Vec<(String, ImageGray)>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no graymaps in {}", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((name, read_graymap(&p)?))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DenoiseCorpus {
    pub train: Vec<ImageGray>,
    pub val: Vec<ImageGray>,
    pub test: Vec<ImageGray>,
}

/// Images from `config.data_dir`, or the synthetic corpus, split by image
/// into training, validation and test parts.
pub fn denoise_corpus(config: &TrainConfig) -> Result<DenoiseCorpus> {
    let mut rng = Rng::with_stream(config.seed, DATA_STREAM);
    let images = match &config.data_dir {
        Some(dir) => load_images(dir)?.into_iter().map(|(_, im)| im).collect(),
        None => synthetic_images(SYNTH_IMAGES, SYNTH_SIZE, &mut rng)?,
    };
    if images.len() < 3 {
        return Err(Error::Config("need at least three images to split".into()));
    }
    let (rest, test) = split_by_image(images, TEST_IMAGE_FRACTION, &mut rng);
    let (train, val) = split_by_image(rest, VAL_IMAGE_FRACTION, &mut rng);
    Ok(DenoiseCorpus { train, val, test })
}

/// Noisy/clean pairs scored during validation.
#[derive(Debug, Clone)]
pub struct ValPatches {
    pub noisy: Vec<Tensor>,
    pub clean: Vec<ImageGray>,
}

pub fn validation_patches(config: &TrainConfig, images: &[ImageGray]) -> Result<ValPatches> {
    let count = (((config.patches as f64) * config.val_fraction).round() as usize).clamp(1, MAX_VAL_PATCHES);
    let mut rng = Rng::with_stream(config.seed, NOISE_STREAM);
    let set = extract_patches(images, config.patch_size, count, &mut rng)?;
    let noise = NoiseSpec::new(config.sigma)?;
    let noisy = set.patches.iter().map(|p| corrupt(p, noise, &mut rng)).collect();
    Ok(ValPatches {
        noisy,
        clean: set.patches,
    })
}

/// Mean PSNR of denoised outputs over the pairs, with sampling (if any)
/// drawn from a generator fixed by `seed`. Sample mode scores the first
/// sample of each image.
pub fn mean_denoised_psnr<N: GatedNetwork>(
    model: &N,
    noisy: &[Tensor],
    clean: &[ImageGray],
    mode: DenoiseMode,
    seed: u64,
) -> Result<f64> {
    let mut rng = Rng::with_stream(seed, EVAL_STREAM);
    let mut total = 0.0;
    for (n, c) in noisy.iter().zip(clean) {
        let out = denoise_image(model, n, mode, 1, &mut rng)?;
        total += psnr(&out[0], c)?;
    }
    Ok(total / clean.len() as f64)
}

#[derive(Debug, Clone)]
pub struct DenoiseEval {
    pub noisy_psnr: f64,
    pub denoised_psnr: f64,
    pub rows: Vec<PsnrRow>,
}

/// Corrupts every image with noise fixed by `seed` and denoises it.
pub fn evaluate_denoising<N: GatedNetwork>(
    model: &N,
    images: &[(String, ImageGray)],
    noise: NoiseSpec,
    mode: DenoiseMode,
    seed: u64,
) -> Result<DenoiseEval> {
    if images.is_empty() {
        return Err(Error::Config("no test images".into()));
    }
    let mut noise_rng = Rng::with_stream(seed, NOISE_STREAM);
    let mut rng = Rng::with_stream(seed, EVAL_STREAM);
    let mut rows = Vec::with_capacity(images.len());
    let (mut noisy_total, mut total) = (0.0, 0.0);
    let label = effective_mode(model, mode).name();
    for (name, clean) in images {
        let noisy = corrupt(clean, noise, &mut noise_rng);
        noisy_total += psnr_values(noisy.data(), clean.pixels());
        let out = denoise_image(model, &noisy, mode, 1, &mut rng)?;
        let p = psnr(&out[0], clean)?;
        total += p;
        rows.push(PsnrRow {
            image: name.clone(),
            sigma: noise.sigma_255,
            mode: label.to_string(),
            psnr_db: p,
        });
    }
    let n = images.len() as f64;
    Ok(DenoiseEval {
        noisy_psnr: noisy_total / n,
        denoised_psnr: total / n,
        rows,
    })
}

/// Per-image `k`-sample log-likelihood of the clean image given its noisy
/// version. Noise is drawn exactly as in [`evaluate_denoising`] with the same
/// seed, so the two functions score the same corrupted inputs.
pub fn denoise_log_likelihood<N: GatedNetwork>(
    model: &N,
    images: &[(String, ImageGray)],
    noise: NoiseSpec,
    k: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut noise_rng = Rng::with_stream(seed, NOISE_STREAM);
    let mut rng = Rng::with_stream(seed, EVAL_STREAM);
    let layout = model.input_layout();
    images
        .iter()
        .map(|(_, clean)| {
            let noisy = corrupt(clean, noise, &mut noise_rng);
            let x = fit_layout(preprocess(&noisy), layout)?;
            let y = fit_layout(preprocess(&clean.to_tensor()), layout)?;
            Ok(mc_log_likelihood(model, &x, &y, k, &mut rng)?.0.log_likelihood)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DenoiseRun {
    pub outcome: TrainOutcome<AnyModel>,
    pub test: DenoiseEval,
}

/// Trains on noisy patches from the training images, selects by validation
/// PSNR, and evaluates the best model on the full test images.
pub fn run_denoise(
    family: Family,
    config: &TrainConfig,
    mode: DenoiseMode,
    on_epoch: EpochHook<'_>,
) -> Result<DenoiseRun> {
    let (preset, config) = family.resolve(config)?;
    let corpus = denoise_corpus(&config)?;
    let model = build_model(&preset, &config)?;
    let layout = model.input_layout();
    let noise = NoiseSpec::new(config.sigma)?;
    let mut rng = Rng::with_stream(config.seed, DATA_STREAM + 100);
    let patches = extract_patches(&corpus.train, config.patch_size, config.patches, &mut rng)?;
    let data = denoising_dataset(&patches, noise, layout, &mut rng)?;
    drop(patches);
    let val = validation_patches(&config, &corpus.val)?;
    let seed = config.seed;
    let mut validate = |m: &AnyModel| mean_denoised_psnr(m, &val.noisy, &val.clean, mode, seed);
    let outcome = train(model, &config, &data, &mut validate, on_epoch)?;
    let named: Vec<(String, ImageGray)> = corpus
        .test
        .into_iter()
        .enumerate()
        .map(|(i, im)| (format!("test{i:02}"), im))
        .collect();
    let test = evaluate_denoising(&outcome.best, &named, noise, mode, seed)?;
    Ok(DenoiseRun { outcome, test })
}
