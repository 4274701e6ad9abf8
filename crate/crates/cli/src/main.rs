//! `lbn`: train, evaluate, denoise with and sample from linearizing belief nets.
//!
//! Exit codes: 0 on success, 1 for usage and input errors, 2 for internal
//! failures. Errors are reported as a single line on stderr.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lbn_core::denoise::DenoiseMode;
use lbn_core::experiment::Family;
use lbn_core::optim::Task;

#[derive(Debug, Parser)]
#[command(name = "lbn", version, about = "Linearizing belief nets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; writes checkpoints, metrics.csv and run.txt into --out.
    Train(TrainArgs),
    /// Denoise a graymap with a trained model.
    Denoise(DenoiseArgs),
    /// Mean test log-likelihood, plus PSNR for denoising models.
    Eval(EvalArgs),
    /// Draw output samples for given inputs.
    Sample(SampleArgs),
    /// Write a bimodal toy regression set as x,y CSV.
    GenToy(GenToyArgs),
    /// Write a directory of synthetic test graymaps.
    GenImages(GenImagesArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    task: Option<Task>,
    /// Flat `key = value` file of training settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// lbn, relu or csbn.
    #[arg(long, default_value = "lbn")]
    family: Family,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Directory of training graymaps (denoising); synthetic images otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Record elapsed seconds in the metric log (makes it run-dependent).
    #[arg(long)]
    timing: bool,
    /// Extra `key=value` settings, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DenoiseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Corrupt the input with this noise level (on 0..255) first; 0 means
    /// the input is already noisy.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value = "mean")]
    mode: DenoiseMode,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    samples: u64,
    #[arg(long)]
    out: PathBuf,
    /// Clean reference; prints `psnr_db=<value>` per output.
    #[arg(long)]
    clean: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Toy: an x,y CSV file. Denoising: a directory of clean graymaps.
    #[arg(long)]
    data: PathBuf,
    /// Monte Carlo samples per example [default: 20 toy, 1 denoising].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise levels for denoising evaluation.
    #[arg(long, value_delimiter = ',', default_value = "25")]
    sigma: Vec<f64>,
    #[arg(long, default_value = "mean")]
    mode: DenoiseMode,
    /// Per-example results.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    /// Toy: comma-separated x values. Otherwise: a graymap.
    #[arg(long, allow_hyphen_values = true)]
    input: String,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    samples: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct GenToyArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenImagesArgs {
    #[arg(long, default_value_t = 4)]
    count: usize,
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] lbn_core::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use lbn_core::Error as E;
        match self {
            CliError::Core(E::Tensor(_) | E::TraceMismatch(_)) => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("{first}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Denoise(a) => commands::denoise(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sample(a) => commands::sample(a),
        Command::GenToy(a) => commands::gen_toy(a),
        Command::GenImages(a) => commands::gen_images(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code())
        }
    }
}
