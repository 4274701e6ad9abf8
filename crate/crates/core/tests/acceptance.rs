//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! nonzero if any fails. `LBN_ACCEPT=1,3,7` runs a subset.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;
use lbn_core::checkpoint::{decode, encode, load_checkpoint, save_checkpoint, Checkpoint};
use lbn_core::denoise::{toy_features, toy_from_model, DenoiseMode};
use lbn_core::experiment::{denoise_corpus, run_denoise, run_toy, Family};
use lbn_core::likelihood::{exact_log_likelihood, mc_log_likelihood};
use lbn_core::model::{
    forward_map, forward_mean, forward_sample, relu_forward, threshold_lbn, LbnConfig, ModelSpec, ReluConfig, ReluNet,
    Topology,
};
use lbn_core::optim::{init_model, train, Dataset, Task, TrainConfig};
use lbn_core::{AnyModel, GateSource, GatedNetwork, LbnModel, Parameterized, Rng, Tensor};

// Criterion 1
const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-6;
const FD_BUDGET_S: f64 = 60.0;
// Criterion 2
const MC_DRAWS: usize = 100_000;
const MC_SE_MULT: f64 = 3.0;
const MEAN_TOL: f64 = 1e-10;
const ENUM_BUDGET_S: f64 = 120.0;
// Criterion 3
const RELU_INPUTS: usize = 1000;
const RELU_TOL: f64 = 1e-12;
// Criterion 4
const TOY_N: usize = 10_000;
const TOY_EPOCHS: usize = 40;
const TOY_LR: f64 = 3e-3;
const TOY_BUDGET_S: f64 = 300.0;
const TOY_SAMPLES: usize = 1000;
const MODE_RADIUS: f64 = 0.25;
const MODE_FRACTION: f64 = 0.80;
const LL_MARGIN: f64 = 0.3;
const RELU_CENTER_TOL: f64 = 0.15;
// Criteria 5 and 6
const DENOISE_PATCHES: usize = 50_000;
const DENOISE_EPOCHS: usize = 1;
const DENOISE_LR: f64 = 3e-3;
const DENOISE_BUDGET_S: f64 = 1800.0;
const PSNR_GAIN_DB: f64 = 4.0;
const NOISY_PSNR_DB: f64 = 20.17;
const NOISY_PSNR_TOL: f64 = 0.1;
const TEST_IMAGE_SIZE: usize = 256;
// Criterion 8
const KTREND_SEEDS: u64 = 3;
const KTREND_N: usize = 5000;
const KTREND_EPOCHS: usize = 20;

type Check = lbn_core::Result<(bool, String)>;

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut dense = 0.0f64;
    for seed in 0..4 {
        let mut m = dense_fd_model(seed);
        jitter_gating_biases(&mut m, &mut Rng::new(seed + 100));
        let mut rng = Rng::new(seed + 200);
        let x = random_tensor(&[6], 1.0, &mut rng);
        let y = nearby_target(&m, &x, 0.5, &mut rng);
        dense = dense.max(fd_max_rel_err(&m, &x, &y, 3, FD_STEP, seed));
    }
    let mut conv = 0.0f64;
    for seed in 0..2 {
        let mut m = conv_fd_model(seed);
        jitter_gating_biases(&mut m, &mut Rng::new(seed + 100));
        let mut rng = Rng::new(seed + 200);
        let x = random_tensor(&[1, 6, 6], 1.0, &mut rng);
        let y = nearby_target(&m, &x, 0.5, &mut rng);
        conv = conv.max(fd_max_rel_err(&m, &x, &y, 3, FD_STEP, seed));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        dense < FD_TOL && conv < FD_TOL && secs < FD_BUDGET_S,
        format!("max rel err dense {dense:.2e}, conv {conv:.2e} (< {FD_TOL:e}); {secs:.1}s (< {FD_BUDGET_S}s)"),
    ))
}

/// `Σ_g p(g|x) 𝒩(y; f(x,g), I)` and `Σ_g p(g|x) f(x,g)` by brute force.
fn enumerate(m: &LbnModel, x: &Tensor, y: &Tensor) -> (f64, Vec<f64>) {
    let rates = m.forward_pass(x, &mut GateSource::Mean).unwrap().traces[0]
        .gates
        .rates
        .clone();
    let h = rates.len();
    let norm = (2.0 * std::f64::consts::PI).powf(-0.5 * y.len() as f64);
    let mut p = 0.0;
    let mut mean = vec![0.0; y.len()];
    for mask in 0..(1usize << h) {
        let g: Vec<f64> = (0..h).map(|i| ((mask >> i) & 1) as f64).collect();
        let w: f64 = g
            .iter()
            .zip(rates.data())
            .map(|(&gi, &r)| if gi == 1.0 { r } else { 1.0 - r })
            .product();
        let f = m
            .forward_pass(x, &mut GateSource::Pinned(&[Tensor::vector(g).unwrap()]))
            .unwrap()
            .output;
        let d: f64 = f.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        p += w * norm * (-0.5 * d).exp();
        for (acc, v) in mean.iter_mut().zip(f.data()) {
            *acc += w * v;
        }
    }
    (p, mean)
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    let mut worst_mean = 0.0f64;
    for (i, h) in [2usize, 5, 8, 10].into_iter().enumerate() {
        let seed = 300 + i as u64;
        let mut any = init_model(&ModelSpec::Lbn(LbnConfig::dense(3, &[h], 2, &[4])), &mut Rng::new(seed))?;
        jitter_gating_biases(&mut any, &mut Rng::new(seed + 1));
        let AnyModel::Lbn(m) = any else { unreachable!() };
        let mut rng = Rng::new(seed + 2);
        let x = random_tensor(&[3], 1.0, &mut rng);
        let y = nearby_target(&m, &x, 0.5, &mut rng);
        let (p_enum, mean_enum) = enumerate(&m, &x, &y);
        let p_lib = exact_log_likelihood(&m, &x, &y)?.exp();
        let lib_agrees = (p_lib - p_enum).abs() <= 1e-12 * p_enum;

        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..MC_DRAWS {
            let p = mc_log_likelihood(&m, &x, &y, 1, &mut rng)?.0.probability();
            s += p;
            s2 += p * p;
        }
        let n = MC_DRAWS as f64;
        let mu = s / n;
        let se = ((s2 / n - mu * mu) / (n - 1.0)).sqrt();
        let z = (mu - p_lib).abs() / se;

        let fm = forward_mean(&m, &x)?;
        let dev = fm
            .data()
            .iter()
            .zip(&mean_enum)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst_mean = worst_mean.max(dev);
        ok &= lib_agrees && z <= MC_SE_MULT && dev <= MEAN_TOL;
        parts.push(format!(
            "H={h}: |z|={z:.2}{}",
            if lib_agrees { "" } else { " (exact mismatch)" }
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < ENUM_BUDGET_S;
    Ok((
        ok,
        format!(
            "{} (≤ {MC_SE_MULT} SE over {MC_DRAWS} draws); mean dev {worst_mean:.1e} (≤ {MEAN_TOL:e}); {secs:.1}s",
            parts.join(", ")
        ),
    ))
}

fn criterion_3() -> Check {
    let mut rng = Rng::new(400);
    let mut net = ReluNet::new(&ReluConfig {
        topology: Topology::Dense { inputs: 5, outputs: 3 },
        widths: vec![16, 16],
    })?;
    for p in net.parameters_mut() {
        for v in p.data_mut() {
            *v = 0.5 * rng.normal();
        }
    }
    for l in &mut net.hidden {
        l.bias = Some(Tensor::zeros(&[l.outputs()]));
    }
    let lbn = threshold_lbn(&net)?;
    let mut equiv = 0.0f64;
    for _ in 0..RELU_INPUTS {
        let x = random_tensor(&[5], 1.0, &mut rng);
        let a = forward_map(&lbn, &x)?;
        let b = relu_forward(&net, &x)?;
        equiv = equiv.max(
            a.data()
                .iter()
                .zip(b.data())
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max),
        );
    }

    // k = 1 loss, per example and as the logged epoch mean.
    let m_out = 3.0;
    let constant = 0.5 * m_out * (2.0 * std::f64::consts::PI).ln();
    let n = 200;
    let inputs: Vec<Tensor> = (0..n).map(|_| random_tensor(&[5], 1.0, &mut rng)).collect();
    let targets: Vec<Tensor> = (0..n).map(|_| random_tensor(&[3], 1.0, &mut rng)).collect();
    let mut per_example = 0.0f64;
    let mut half_mse_sum = 0.0;
    for (x, y) in inputs.iter().zip(&targets) {
        let f = relu_forward(&net, x)?;
        let half_sq = 0.5
            * f.data()
                .iter()
                .zip(y.data())
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>();
        half_mse_sum += half_sq;
        let nll = -mc_log_likelihood(&net, x, y, 1, &mut rng)?.0.log_likelihood;
        per_example = per_example.max((nll - (half_sq + constant)).abs());
    }
    let data = Dataset::new(inputs, targets)?;
    let config = TrainConfig {
        epochs: 1,
        batch_size: n,
        k: 1,
        ..TrainConfig::default()
    };
    let outcome = train(net, &config, &data, &mut |_| Ok(0.0), None)?;
    let epoch = (outcome.log.rows[0].train_nll - (half_mse_sum / n as f64 + constant)).abs();
    Ok((
        equiv <= RELU_TOL && per_example == 0.0 && epoch <= 1e-12,
        format!(
            "map vs relu max dev {equiv:.1e} on {RELU_INPUTS} inputs (≤ {RELU_TOL:e}); k=1 loss dev {per_example:e} per example (exact), {epoch:.1e} epoch mean (≤ 1e-12)"
        ),
    ))
}

fn toy_config() -> TrainConfig {
    TrainConfig {
        toy_n: TOY_N,
        epochs: TOY_EPOCHS,
        lr: TOY_LR,
        k: 20,
        eval_k: 20,
        seed: 0,
        record_wall_time: true,
        ..TrainConfig::default()
    }
}

fn criterion_4() -> Check {
    let config = toy_config();
    let lbn = run_toy(Family::Lbn, &config, None)?;
    let secs = lbn.outcome.log.rows.last().map_or(0.0, |r| r.wall_seconds);
    let relu = run_toy(Family::Relu, &config, None)?;

    let x0 = toy_features(0.0);
    let mut rng = Rng::new(500);
    let near = (0..TOY_SAMPLES)
        .filter(|_| {
            let y = toy_from_model(forward_sample(&lbn.outcome.best, &x0, &mut rng).unwrap().0.data()[0]);
            (y - 1.0).abs() <= MODE_RADIUS || (y + 1.0).abs() <= MODE_RADIUS
        })
        .count();
    let frac = near as f64 / TOY_SAMPLES as f64;
    let gap = lbn.test_log_likelihood - relu.test_log_likelihood;
    let relu_at_0 = toy_from_model(forward_map(&relu.outcome.best, &x0)?.data()[0]);
    Ok((
        frac >= MODE_FRACTION && gap >= LL_MARGIN && relu_at_0.abs() <= RELU_CENTER_TOL && secs <= TOY_BUDGET_S,
        format!(
            "{:.1}% of samples at x=0 within {MODE_RADIUS} of ±1 (≥ {:.0}%); test LL lbn {:.3} vs relu {:.3}, gap {gap:.3} (≥ {LL_MARGIN}); relu(0) = {relu_at_0:.3} (|.| ≤ {RELU_CENTER_TOL}); lbn train {secs:.0}s (≤ {TOY_BUDGET_S}s)",
            100.0 * frac,
            100.0 * MODE_FRACTION,
            lbn.test_log_likelihood,
            relu.test_log_likelihood
        ),
    ))
}

fn denoise_config() -> TrainConfig {
    TrainConfig {
        patches: DENOISE_PATCHES,
        epochs: DENOISE_EPOCHS,
        lr: DENOISE_LR,
        sigma: 25.0,
        seed: 0,
        record_wall_time: true,
        ..TrainConfig::for_task(Task::Denoise)
    }
}

/// LBN test PSNR and training seconds, shared by criteria 5 and 6.
struct DenoiseResult {
    psnr: f64,
    noisy: f64,
    secs: f64,
    params: usize,
}

fn lbn_denoise() -> lbn_core::Result<DenoiseResult> {
    let run = run_denoise(Family::Lbn, &denoise_config(), DenoiseMode::Mean, None)?;
    Ok(DenoiseResult {
        psnr: run.test.denoised_psnr,
        noisy: run.test.noisy_psnr,
        secs: run.outcome.log.rows.last().map_or(0.0, |r| r.wall_seconds),
        params: run.outcome.best.parameter_count(),
    })
}

fn criterion_5(lbn: &DenoiseResult) -> Check {
    let corpus = denoise_corpus(&denoise_config())?;
    let sizes_ok = corpus
        .test
        .iter()
        .all(|im| im.height() == TEST_IMAGE_SIZE && im.width() == TEST_IMAGE_SIZE);
    let gain = lbn.psnr - lbn.noisy;
    Ok((
        gain >= PSNR_GAIN_DB && (lbn.noisy - NOISY_PSNR_DB).abs() <= NOISY_PSNR_TOL && sizes_ok && lbn.secs <= DENOISE_BUDGET_S,
        format!(
            "test PSNR {:.2} dB vs noisy {:.2} dB, gain {gain:.2} (≥ {PSNR_GAIN_DB}); noisy within {NOISY_PSNR_TOL} of {NOISY_PSNR_DB}; {} test images {TEST_IMAGE_SIZE}×{TEST_IMAGE_SIZE}; train {:.0}s (≤ {DENOISE_BUDGET_S}s)",
            lbn.psnr,
            lbn.noisy,
            corpus.test.len(),
            lbn.secs
        ),
    ))
}

fn criterion_6(lbn: &DenoiseResult) -> Check {
    let config = TrainConfig {
        // Wall clock is the binding limit.
        epochs: 100,
        max_wall_seconds: Some(lbn.secs),
        ..denoise_config()
    };
    let run = run_denoise(Family::Csbn, &config, DenoiseMode::Mean, None)?;
    let csbn_params = run.outcome.best.parameter_count();
    let csbn_secs = run.outcome.log.rows.last().map_or(0.0, |r| r.wall_seconds);
    Ok((
        lbn.psnr >= run.test.denoised_psnr,
        format!(
            "lbn {:.2} dB ({} params, {:.0}s) vs c-sbn {:.2} dB ({csbn_params} params, {csbn_secs:.0}s, {} steps)",
            lbn.psnr, lbn.params, lbn.secs, run.test.denoised_psnr, run.outcome.steps
        ),
    ))
}

fn criterion_7() -> Check {
    let config = TrainConfig {
        toy_n: 500,
        epochs: 3,
        k: 5,
        eval_k: 5,
        lr: 3e-3,
        seed: 7,
        ..TrainConfig::default()
    };
    let a = run_toy(Family::Lbn, &config, None)?;
    let b = run_toy(Family::Lbn, &config, None)?;
    let toy_same = a.outcome.log.to_csv() == b.outcome.log.to_csv();

    let dconf = TrainConfig {
        patches: 200,
        epochs: 2,
        seed: 7,
        ..TrainConfig::for_task(Task::Denoise)
    };
    let c = run_denoise(Family::Lbn, &dconf, DenoiseMode::Mean, None)?;
    let d = run_denoise(Family::Lbn, &dconf, DenoiseMode::Mean, None)?;
    let denoise_same = c.outcome.log.to_csv() == d.outcome.log.to_csv();

    let mut roundtrips = true;
    let dir = tempfile::tempdir().map_err(|e| lbn_core::Error::io(std::env::temp_dir(), e))?;
    for (name, model) in [("toy", &a.outcome.best), ("conv-desk", &c.outcome.best)] {
        let ckpt = Checkpoint {
            model: model.clone(),
            preset: name.into(),
            task: "acceptance".into(),
            seed: 7,
            config_digest: config.digest(),
        };
        let bytes = encode(&ckpt)?;
        let path = dir.path().join(format!("{name}.ckpt"));
        save_checkpoint(&path, &ckpt)?;
        let back = load_checkpoint(&path)?;
        let bits = |m: &AnyModel| -> Vec<u64> {
            m.parameters()
                .iter()
                .flat_map(|p| p.data().iter().map(|v| v.to_bits()))
                .collect()
        };
        roundtrips &= bits(&back.model) == bits(model) && encode(&back)? == bytes && decode(&bytes)? == back;
    }
    Ok((
        toy_same && denoise_same && roundtrips,
        format!("identical logs: toy {toy_same}, denoise {denoise_same}; bitwise checkpoint roundtrip {roundtrips}"),
    ))
}

fn criterion_8() -> Check {
    let mut per_seed = Vec::new();
    for seed in 0..KTREND_SEEDS {
        let ll = |k| -> lbn_core::Result<f64> {
            let config = TrainConfig {
                toy_n: KTREND_N,
                epochs: KTREND_EPOCHS,
                lr: TOY_LR,
                k,
                eval_k: 20,
                seed,
                ..TrainConfig::default()
            };
            Ok(run_toy(Family::Lbn, &config, None)?.test_log_likelihood)
        };
        per_seed.push((ll(1)?, ll(20)?));
    }
    let n = per_seed.len() as f64;
    let k1 = per_seed.iter().map(|p| p.0).sum::<f64>() / n;
    let k20 = per_seed.iter().map(|p| p.1).sum::<f64>() / n;
    let detail: Vec<String> = per_seed.iter().map(|(a, b)| format!("{a:.3}→{b:.3}")).collect();
    Ok((
        k20 >= k1,
        format!(
            "mean test LL k=1 {k1:.3}, k=20 {k20:.3} over {KTREND_SEEDS} seeds [{}]",
            detail.join(", ")
        ),
    ))
}

fn report(id: usize, title: &str, result: Check) -> bool {
    match result {
        Ok((true, detail)) => {
            println!("PASS criterion {id} ({title}): {detail}");
            true
        }
        Ok((false, detail)) => {
            println!("FAIL criterion {id} ({title}): {detail}");
            false
        }
        Err(e) => {
            println!("FAIL criterion {id} ({title}): error: {e}");
            false
        }
    }
}

fn main() -> ExitCode {
    let wanted: Option<Vec<usize>> = std::env::var("LBN_ACCEPT")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let run = |id: usize| wanted.as_ref().is_none_or(|w| w.contains(&id));
    let mut ok = true;
    if run(1) {
        ok &= report(1, "gradient exactness", criterion_1());
    }
    if run(2) {
        ok &= report(2, "enumeration oracle", criterion_2());
    }
    if run(3) {
        ok &= report(3, "relu equivalence", criterion_3());
    }
    if run(4) {
        ok &= report(4, "multimodality", criterion_4());
    }
    if run(5) || run(6) {
        match lbn_denoise() {
            Ok(lbn) => {
                if run(5) {
                    ok &= report(5, "desk-scale denoising", criterion_5(&lbn));
                }
                if run(6) {
                    ok &= report(6, "lbn vs c-sbn", criterion_6(&lbn));
                }
            }
            Err(e) => {
                for (id, title) in [(5, "desk-scale denoising"), (6, "lbn vs c-sbn")] {
                    if run(id) {
                        ok &= report(
                            id,
                            title,
                            Err(lbn_core::Error::Config(format!("lbn training failed: {e}"))),
                        );
                    }
                }
            }
        }
    }
    if run(7) {
        ok &= report(7, "determinism and serialization", criterion_7());
    }
    if run(8) {
        ok &= report(8, "k-trend", criterion_8());
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
