use super::{fit_layout, preprocess, ImageGray, PIXEL_MEAN, PIXEL_SCALE};
use crate::model::InputLayout;
use crate::optim::Dataset;
use crate::tensor::{Rng, Tensor};
use crate::{Error, Result};

/// Additive Gaussian noise with standard deviation `sigma_255 / 255` on the
/// `[0, 1]` pixel scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma_255: f64,
}

impl NoiseSpec {
    pub fn new(sigma_255: f64) -> Result<Self> {
        if !(sigma_255 >= 0.0 && sigma_255.is_finite()) {
            return Err(Error::Config(format!(
                "noise sigma must be nonnegative, got {sigma_255}"
            )));
        }
        Ok(Self { sigma_255 })
    }

    pub fn std(&self) -> f64 {
        self.sigma_255 / 255.0
    }

    /// PSNR of a noisy image against its clean source, in expectation.
    pub fn expected_psnr(&self) -> f64 {
        -10.0 * (self.std() * self.std()).log10()
    }
}

/// `x + N(0, (σ/255)²)` per pixel, returned as a `1 × h × w` tensor without
/// clipping.
pub fn corrupt(x: &ImageGray, spec: NoiseSpec, rng: &mut Rng) -> Tensor {
    let s = spec.std();
    let data = x
        .pixels()
        .iter()
        .map(|&v| if s == 0.0 { v } else { v + s * rng.normal() })
        .collect();
    Tensor::from_parts(vec![1, x.height(), x.width()], data)
}

/// Clean square crops together with the preprocessing constants.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub size: usize,
    pub patches: Vec<ImageGray>,
    pub mean: f64,
    pub scale: f64,
}

/// `count` uniformly placed `size × size` crops, each from a uniformly
/// chosen image.
pub fn extract_patches(images: &[ImageGray], size: usize, count: usize, rng: &mut Rng) -> Result<PatchSet> {
    if images.is_empty() {
        return Err(Error::Config("no images to extract patches from".into()));
    }
    if size == 0 {
        return Err(Error::Config("patch size must be positive".into()));
    }
    if let Some(im) = images.iter().find(|im| im.height() < size || im.width() < size) {
        return Err(Error::Shape(format!(
            "{size}×{size} patch does not fit a {}×{} image",
            im.height(),
            im.width()
        )));
    }
    let mut patches = Vec::with_capacity(count);
    for _ in 0..count {
        let im = &images[rng.below(images.len())];
        let top = rng.below(im.height() - size + 1);
        let left = rng.below(im.width() - size + 1);
        patches.push(im.crop(top, left, size, size)?);
    }
    Ok(PatchSet {
        size,
        patches,
        mean: PIXEL_MEAN,
        scale: PIXEL_SCALE,
    })
}

/// Shuffles whole images into a training and a held-out part. With at least
/// two images both parts are nonempty.
pub fn split_by_image(images: Vec<ImageGray>, test_fraction: f64, rng: &mut Rng) -> (Vec<ImageGray>, Vec<ImageGray>) {
    let mut images = images;
    rng.shuffle(&mut images);
    let n = images.len();
    let mut n_test = (n as f64 * test_fraction).round() as usize;
    if n >= 2 {
        n_test = n_test.clamp(1, n - 1);
    } else {
        n_test = 0;
    }
    let test = images.split_off(n - n_test);
    (images, test)
}

/// Pairs of preprocessed (noisy, clean) patches shaped for `layout`. Noise is
/// drawn once per patch.
pub fn denoising_dataset(set: &PatchSet, noise: NoiseSpec, layout: InputLayout, rng: &mut Rng) -> Result<Dataset> {
    let mut inputs = Vec::with_capacity(set.patches.len());
    let mut targets = Vec::with_capacity(set.patches.len());
    for p in &set.patches {
        inputs.push(fit_layout(preprocess(&corrupt(p, noise, rng)), layout)?);
        targets.push(fit_layout(preprocess(&p.to_tensor()), layout)?);
    }
    Dataset::new(inputs, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::psnr_values;

    fn ramp(h: usize, w: usize) -> ImageGray {
        let px = (0..h * w).map(|i| (i % 256) as f64 / 255.0).collect();
        ImageGray::new(h, w, px).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let im = ramp(8, 8);
        let n = corrupt(&im, NoiseSpec::new(0.0).unwrap(), &mut Rng::new(0));
        assert_eq!(n.data(), im.pixels());
    }

    #[test]
    fn noise_variance_and_psnr() {
        let im = ImageGray::filled(1000, 1000, 0.5).unwrap();
        let spec = NoiseSpec::new(25.0).unwrap();
        let n = corrupt(&im, spec, &mut Rng::new(1));
        let var = n.data().iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f64>() / 1e6;
        let target = spec.std() * spec.std();
        assert!((var / target - 1.0).abs() < 0.02, "{var} vs {target}");
        let p = psnr_values(n.data(), im.pixels());
        assert!((p - 20.17).abs() < 0.1, "{p}");
        assert!((spec.expected_psnr() - 20.17).abs() < 0.01);
        assert!(NoiseSpec::new(-1.0).is_err());
    }

    #[test]
    fn whole_image_patch() {
        let im = ramp(5, 5);
        let set = extract_patches(std::slice::from_ref(&im), 5, 3, &mut Rng::new(2)).unwrap();
        assert!(set.patches.iter().all(|p| *p == im));
        assert!(extract_patches(&[im], 6, 1, &mut Rng::new(2)).is_err());
    }

    #[test]
    fn patches_are_reproducible() {
        let ims = [ramp(20, 30), ramp(25, 17)];
        let a = extract_patches(&ims, 7, 50, &mut Rng::new(4)).unwrap();
        let b = extract_patches(&ims, 7, 50, &mut Rng::new(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn patch_histogram_matches_source() {
        let mut rng = Rng::new(5);
        let px: Vec<f64> = (0..512 * 512).map(|_| (rng.below(16) as f64) / 15.0).collect();
        let im = ImageGray::new(512, 512, px).unwrap();
        let set = extract_patches(std::slice::from_ref(&im), 16, 50_000, &mut rng).unwrap();
        let hist = |vals: &mut dyn Iterator<Item = f64>| {
            let mut h = [0.0f64; 16];
            let mut n = 0.0;
            for v in vals {
                h[(v * 15.0).round() as usize] += 1.0;
                n += 1.0;
            }
            h.map(|c| c / n)
        };
        let a = hist(&mut im.pixels().iter().copied());
        let b = hist(&mut set.patches.iter().flat_map(|p| p.pixels().iter().copied()));
        let l1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        assert!(l1 < 0.01, "{l1}");
    }

    #[test]
    fn split_keeps_images_whole() {
        let ims: Vec<ImageGray> = (0..10)
            .map(|i| ImageGray::filled(4, 4, i as f64 / 10.0).unwrap())
            .collect();
        let (train, test) = split_by_image(ims, 0.2, &mut Rng::new(6));
        assert_eq!((train.len(), test.len()), (8, 2));
        for t in &test {
            assert!(!train.contains(t));
        }
    }
}
