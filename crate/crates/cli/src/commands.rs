use std::path::{Path, PathBuf};

use lbn_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use lbn_core::denoise::{
    corrupt, decode_pnm, denoise_image, encode_pgm, psnr, psnr_csv, read_graymap, synthetic_images, to_gray,
    toy_bimodal_dataset, toy_features, toy_from_model, toy_to_model, DenoiseMode, ImageGray, NoiseSpec, Pnm, ToySample,
};
use lbn_core::experiment::{
    denoise_log_likelihood, evaluate_denoising, load_images, run_denoise, run_toy, Family, DATA_STREAM, EVAL_STREAM,
    NOISE_STREAM,
};
use lbn_core::likelihood::mc_log_likelihood;
use lbn_core::model::forward_sample;
use lbn_core::optim::{Task, TrainConfig};
use lbn_core::{write_atomic, AnyModel, Error, Rng};

use crate::{CliError, CliResult, DenoiseArgs, EvalArgs, GenImagesArgs, GenToyArgs, SampleArgs, TrainArgs};

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

fn csv_bytes<R: AsRef<[String]>>(header: &[&str], rows: impl IntoIterator<Item = R>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.as_ref())?;
    }
    w.into_inner().map_err(|e| CliError::Usage(format!("csv: {e}")))
}

fn build_config(args: &TrainArgs) -> CliResult<TrainConfig> {
    let file = args.config.as_deref().map(read_text).transpose()?;
    let task = match (args.task, &file) {
        (Some(t), _) => t,
        (None, Some(text)) => TrainConfig::from_kv(text)?.task,
        (None, None) => Task::Toy,
    };
    let mut config = TrainConfig::for_task(task);
    if let Some(text) = &file {
        config.apply_kv(text)?;
    }
    config.task = task;
    if let Some(p) = &args.preset {
        config.preset = p.clone();
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(k) = args.k {
        config.k = k as usize;
    }
    if let Some(e) = args.epochs {
        config.epochs = e as usize;
    }
    if let Some(lr) = args.lr {
        config.lr = lr;
    }
    if let Some(d) = &args.data {
        config.data_dir = Some(d.clone());
    }
    if args.timing {
        config.record_wall_time = true;
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        config.set(k, v)?;
    }
    config.validate()?;
    Ok(config)
}

fn checkpoint(model: &AnyModel, config: &TrainConfig) -> Checkpoint {
    Checkpoint {
        model: model.clone(),
        preset: config.preset.clone(),
        task: config.task.name().into(),
        seed: config.seed,
        config_digest: config.digest(),
    }
}

pub fn train(args: TrainArgs) -> CliResult<()> {
    let config = build_config(&args)?;
    let (_, resolved) = args.family.resolve(&config)?;
    create_dir(&args.out)?;
    let out = args.out.clone();
    let every = resolved.checkpoint_every;
    let mut hook = |epoch: usize, m: &AnyModel| {
        if every > 0 && epoch.is_multiple_of(every) {
            save_checkpoint(&out.join(format!("epoch-{epoch:04}.ckpt")), &checkpoint(m, &resolved))?;
        }
        Ok(())
    };
    let (outcome, summary, psnr_rows) = match resolved.task {
        Task::Toy => {
            let run = run_toy(args.family, &config, Some(&mut hook))?;
            let summary = vec![("test_log_likelihood", run.test_log_likelihood.to_string())];
            (run.outcome, summary, None)
        }
        Task::Denoise => {
            let run = run_denoise(args.family, &config, DenoiseMode::Mean, Some(&mut hook))?;
            let summary = vec![
                ("test_psnr_db", run.test.denoised_psnr.to_string()),
                ("test_noisy_psnr_db", run.test.noisy_psnr.to_string()),
            ];
            (run.outcome, summary, Some(run.test.rows))
        }
    };
    save_checkpoint(&args.out.join("model.ckpt"), &checkpoint(&outcome.best, &resolved))?;
    save_checkpoint(&args.out.join("last.ckpt"), &checkpoint(&outcome.last, &resolved))?;
    write_atomic(&args.out.join("metrics.csv"), outcome.log.to_csv().as_bytes())?;
    if let Some(rows) = psnr_rows {
        write_atomic(&args.out.join("test_psnr.csv"), psnr_csv(&rows).as_bytes())?;
    }
    let mut manifest = resolved.to_kv();
    manifest.push_str(&format!("family = {}\n", args.family_name()));
    manifest.push_str(&format!("config_digest = {}\n", resolved.digest()));
    manifest.push_str(&format!("steps = {}\n", outcome.steps));
    manifest.push_str(&format!("best_epoch = {}\n", outcome.best_epoch));
    manifest.push_str(&format!("best_val_metric = {}\n", outcome.best_metric));
    for (k, v) in &summary {
        manifest.push_str(&format!("{k} = {v}\n"));
    }
    write_atomic(&args.out.join("run.txt"), manifest.as_bytes())?;
    println!(
        "best_epoch={} best_val_metric={}",
        outcome.best_epoch, outcome.best_metric
    );
    for (k, v) in summary {
        println!("{k}={v}");
    }
    Ok(())
}

impl TrainArgs {
    fn family_name(&self) -> &'static str {
        match self.family {
            Family::Lbn => "lbn",
            Family::Relu => "relu",
            Family::Csbn => "csbn",
        }
    }
}

/// PSNR of the file as written, after 8-bit quantization.
fn written_psnr(bytes: &[u8], clean: &ImageGray) -> CliResult<f64> {
    let gray = match decode_pnm(bytes)? {
        Pnm::Gray(g) => g,
        Pnm::Color(c) => to_gray(&c)?,
    };
    Ok(psnr(&gray, clean)?)
}

pub fn denoise(args: DenoiseArgs) -> CliResult<()> {
    let ckpt = load_checkpoint(&args.model)?;
    let input = read_graymap(&args.input)?;
    let clean = args.clean.as_deref().map(read_graymap).transpose()?;
    if let Some(c) = &clean {
        if (c.height(), c.width()) != (input.height(), input.width()) {
            return Err(CliError::Usage(format!(
                "clean image is {}×{}, input is {}×{}",
                c.height(),
                c.width(),
                input.height(),
                input.width()
            )));
        }
    }
    let noise = NoiseSpec::new(args.sigma)?;
    let noisy = corrupt(&input, noise, &mut Rng::with_stream(args.seed, NOISE_STREAM));
    let outputs = denoise_image(
        &ckpt.model,
        &noisy,
        args.mode,
        args.samples as usize,
        &mut Rng::with_stream(args.seed, EVAL_STREAM),
    )?;
    let mut files = Vec::with_capacity(outputs.len() + 1);
    if args.sigma > 0.0 {
        let shown = ImageGray::from_clipped(input.height(), input.width(), noisy.data())?;
        files.push(("noisy.pgm".to_string(), encode_pgm(&shown)));
    }
    let single = outputs.len() == 1 && args.mode != DenoiseMode::Sample;
    for (i, out) in outputs.iter().enumerate() {
        let name = if single {
            "denoised.pgm".to_string()
        } else {
            format!("sample_{i:03}.pgm")
        };
        files.push((name, encode_pgm(out)));
    }
    let scores = match &clean {
        Some(c) => files
            .iter()
            .filter(|(n, _)| n != "noisy.pgm")
            .map(|(_, b)| written_psnr(b, c))
            .collect::<CliResult<Vec<_>>>()?,
        None => Vec::new(),
    };
    create_dir(&args.out)?;
    for (name, bytes) in &files {
        write_atomic(&args.out.join(name), bytes)?;
    }
    for p in scores {
        println!("psnr_db={p:.4}");
    }
    Ok(())
}

fn read_toy_csv(path: &Path) -> CliResult<Vec<ToySample>> {
    let path: PathBuf = if path.is_dir() {
        path.join("toy.csv")
    } else {
        path.to_path_buf()
    };
    let text = read_text(&path)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = |j: usize| -> CliResult<f64> {
            rec.get(j)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| CliError::Usage(format!("{}: row {} is not `x,y`", path.display(), i + 2)))
        };
        out.push(ToySample {
            x: field(0)?,
            y: field(1)?,
        });
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("{}: no rows", path.display())));
    }
    Ok(out)
}

pub fn eval(args: EvalArgs) -> CliResult<()> {
    let ckpt = load_checkpoint(&args.model)?;
    let task: Task = ckpt.task.parse()?;
    let model = &ckpt.model;
    match task {
        Task::Toy => {
            let k = args.k.unwrap_or(20) as usize;
            let data = read_toy_csv(&args.data)?;
            let mut rng = Rng::with_stream(args.seed, EVAL_STREAM);
            let mut lls = Vec::with_capacity(data.len());
            for s in &data {
                let y = lbn_core::Tensor::vector(vec![toy_to_model(s.y)]).map_err(Error::from)?;
                lls.push(
                    mc_log_likelihood(model, &toy_features(s.x), &y, k, &mut rng)?
                        .0
                        .log_likelihood,
                );
            }
            let mean = lls.iter().sum::<f64>() / lls.len() as f64;
            if let Some(path) = &args.csv {
                let rows = data
                    .iter()
                    .zip(&lls)
                    .enumerate()
                    .map(|(i, (s, l))| vec![i.to_string(), s.x.to_string(), s.y.to_string(), l.to_string()]);
                write_atomic(path, &csv_bytes(&["index", "x", "y", "log_likelihood"], rows)?)?;
            }
            println!("examples={} k={k} log_likelihood={mean}", lls.len());
        }
        Task::Denoise => {
            let k = args.k.unwrap_or(1) as usize;
            let images = load_images(&args.data)?;
            let mut rows = Vec::new();
            let mut lines = Vec::new();
            for &sigma in &args.sigma {
                let noise = NoiseSpec::new(sigma)?;
                let lls = denoise_log_likelihood(model, &images, noise, k, args.seed)?;
                let ll = lls.iter().sum::<f64>() / lls.len() as f64;
                let ev = evaluate_denoising(model, &images, noise, args.mode, args.seed)?;
                lines.push(format!(
                    "sigma={sigma} images={} k={k} log_likelihood={ll} psnr_db={} noisy_psnr_db={}",
                    images.len(),
                    ev.denoised_psnr,
                    ev.noisy_psnr
                ));
                rows.extend(ev.rows);
            }
            if let Some(path) = &args.csv {
                write_atomic(path, psnr_csv(&rows).as_bytes())?;
            }
            for l in lines {
                println!("{l}");
            }
        }
    }
    Ok(())
}

pub fn sample(args: SampleArgs) -> CliResult<()> {
    let ckpt = load_checkpoint(&args.model)?;
    let n = args.samples as usize;
    let mut rng = Rng::with_stream(args.seed, EVAL_STREAM);
    if ckpt.task == Task::Toy.name() {
        let xs = args
            .input
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| CliError::Usage(format!("--input expects comma-separated numbers, got `{}`", args.input)))?;
        let mut rows = Vec::with_capacity(xs.len() * n);
        for &x in &xs {
            let features = toy_features(x);
            for _ in 0..n {
                let (out, _) = forward_sample(&ckpt.model, &features, &mut rng)?;
                rows.push(vec![x.to_string(), toy_from_model(out.data()[0]).to_string()]);
            }
        }
        let bytes = csv_bytes(&["x", "y"], rows)?;
        create_dir(&args.out)?;
        write_atomic(&args.out.join("samples.csv"), &bytes)?;
    } else {
        let input = read_graymap(Path::new(&args.input))?;
        let outputs = denoise_image(&ckpt.model, &input.to_tensor(), DenoiseMode::Sample, n, &mut rng)?;
        create_dir(&args.out)?;
        for (i, out) in outputs.iter().enumerate() {
            write_atomic(&args.out.join(format!("sample_{i:03}.pgm")), &encode_pgm(out))?;
        }
    }
    Ok(())
}

pub fn gen_toy(args: GenToyArgs) -> CliResult<()> {
    let data = toy_bimodal_dataset(args.n, &mut Rng::with_stream(args.seed, DATA_STREAM))?;
    let rows = data.iter().map(|s| vec![s.x.to_string(), s.y.to_string()]);
    write_atomic(&args.out, &csv_bytes(&["x", "y"], rows)?)?;
    Ok(())
}

pub fn gen_images(args: GenImagesArgs) -> CliResult<()> {
    let images = synthetic_images(args.count, args.size, &mut Rng::with_stream(args.seed, DATA_STREAM))?;
    create_dir(&args.out)?;
    for (i, im) in images.iter().enumerate() {
        write_atomic(&args.out.join(format!("img_{i:03}.pgm")), &encode_pgm(im))?;
    }
    Ok(())
}
