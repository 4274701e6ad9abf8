use lbn_core::denoise::{
    corrupt, decode_pnm, denoise_image, deprocess, encode_pgm, preprocess, psnr, psnr_values, synthetic_images,
    DenoiseMode, ImageGray, NoiseSpec, Pnm,
};
use lbn_core::experiment::{evaluate_denoising, run_denoise, Family};
use lbn_core::optim::{init_preset, Task, TrainConfig};
use lbn_core::{Rng, Tensor};
use proptest::prelude::*;

fn image(h: usize, w: usize, px: Vec<f64>) -> ImageGray {
    ImageGray::new(h, w, px).unwrap()
}

fn pixels(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn preprocess_then_deprocess_is_identity(px in pixels(30)) {
        let im = image(5, 6, px);
        let back = deprocess(&preprocess(&im.to_tensor())).unwrap();
        for (a, b) in back.pixels().iter().zip(im.pixels()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn psnr_is_symmetric_and_capped(a in pixels(16), b in pixels(16)) {
        let (x, y) = (image(4, 4, a), image(4, 4, b));
        let p = psnr(&x, &y).unwrap();
        prop_assert_eq!(p, psnr(&y, &x).unwrap());
        prop_assert!(p <= 99.0);
        prop_assert!(p >= 0.0);
        prop_assert_eq!(psnr(&x, &x).unwrap(), 99.0);
    }

    #[test]
    fn pgm_bytes_roundtrip_after_quantization(px in prop::collection::vec(0u8..=255, 12)) {
        let im = image(3, 4, px.iter().map(|&v| v as f64 / 255.0).collect());
        let Pnm::Gray(back) = decode_pnm(&encode_pgm(&im)).unwrap() else {
            panic!("expected a graymap");
        };
        prop_assert_eq!(back, im);
    }
}

#[test]
fn psnr_against_hand_mse() {
    let x = image(1, 4, vec![0.0, 0.5, 1.0, 0.25]);
    let y = image(1, 4, vec![0.1, 0.5, 0.8, 0.25]);
    let mse: f64 = (0.01 + 0.04) / 4.0;
    assert!((psnr(&x, &y).unwrap() - (-10.0 * mse.log10())).abs() < 1e-12);
}

#[test]
fn noise_level_matches_expected_psnr() {
    let clean = image(256, 256, vec![0.5; 256 * 256]);
    let spec = NoiseSpec::new(25.0).unwrap();
    let noisy = corrupt(&clean, spec, &mut Rng::new(31));
    let expected = -20.0 * (25.0f64 / 255.0).log10();
    assert!((psnr_values(noisy.data(), clean.pixels()) - expected).abs() < 0.1);
    assert!((spec.expected_psnr() - expected).abs() < 1e-12);
}

#[test]
fn map_mode_is_deterministic_and_size_free() {
    let model = init_preset("conv-desk", 16, &mut Rng::new(32)).unwrap();
    let noisy = Tensor::new(vec![1, 40, 24], (0..960).map(|i| (i % 17) as f64 / 16.0).collect()).unwrap();
    let a = denoise_image(&model, &noisy, DenoiseMode::Map, 1, &mut Rng::new(1)).unwrap();
    let b = denoise_image(&model, &noisy, DenoiseMode::Map, 1, &mut Rng::new(2)).unwrap();
    assert_eq!(a, b);
    assert_eq!((a[0].height(), a[0].width()), (40, 24));
    let samples = denoise_image(&model, &noisy, DenoiseMode::Sample, 3, &mut Rng::new(3)).unwrap();
    assert_eq!(samples.len(), 3);
    assert_ne!(samples[0], samples[1]);
}

#[test]
fn single_block_mean_is_deterministic() {
    let model = init_preset("patch", 8, &mut Rng::new(33)).unwrap();
    let noisy = Tensor::new(vec![1, 8, 8], (0..64).map(|i| i as f64 / 63.0).collect()).unwrap();
    let a = denoise_image(&model, &noisy, DenoiseMode::Mean, 1, &mut Rng::new(4)).unwrap();
    let b = denoise_image(&model, &noisy, DenoiseMode::Mean, 1, &mut Rng::new(5)).unwrap();
    assert_eq!(a, b);
    // A dense model is tied to its input size.
    let wrong = Tensor::zeros(&[1, 9, 9]);
    assert!(denoise_image(&model, &wrong, DenoiseMode::Mean, 1, &mut Rng::new(6)).is_err());
}

#[test]
fn short_training_beats_the_noisy_input() {
    let config = TrainConfig {
        patches: 2000,
        epochs: 1,
        lr: 3e-3,
        seed: 5,
        ..TrainConfig::for_task(Task::Denoise)
    };
    let run = run_denoise(Family::Lbn, &config, DenoiseMode::Mean, None).unwrap();
    assert!(
        run.test.denoised_psnr > run.test.noisy_psnr,
        "{:?}",
        (run.test.denoised_psnr, run.test.noisy_psnr)
    );
    assert!((run.test.noisy_psnr - 20.17).abs() < 0.2, "{}", run.test.noisy_psnr);
}

#[test]
fn evaluation_is_reproducible() {
    let model = init_preset("conv-desk", 16, &mut Rng::new(34)).unwrap();
    let images: Vec<(String, ImageGray)> = synthetic_images(2, 32, &mut Rng::new(35))
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, im)| (format!("img_{i}"), im))
        .collect();
    let noise = NoiseSpec::new(25.0).unwrap();
    let a = evaluate_denoising(&model, &images, noise, DenoiseMode::Mean, 9).unwrap();
    let b = evaluate_denoising(&model, &images, noise, DenoiseMode::Mean, 9).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.rows.len(), 2);
}
