mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;
use thermogyro::eval::TrainingPool;
use thermogyro::loss::LossKind;
use thermogyro::model::Variant;
use thermogyro::simulator::Clutter;

/// Thermal-gyro fusion rotational odometry: simulate data, train and evaluate
/// the fusion CNN, and report its cost.
#[derive(Parser, Debug)]
#[command(name = "thermogyro", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic dataset (CSV acquisitions plus manifest.json).
    Simulate(SimulateArgs),
    /// Train one model and save its weights and loss history.
    Train(TrainArgs),
    /// Leave-one-acquisition-out evaluation over one environment.
    Kfold(KfoldArgs),
    /// K-fold for each frame count, both variants.
    SweepNf(SweepNfArgs),
    /// K-fold for each subsampling factor, both variants.
    SweepNr(SweepNrArgs),
    /// Parameter and FLOP counts per configuration.
    Complexity(ComplexityArgs),
    /// Integrated heading of a model against gyro-only dead reckoning.
    Drift(DriftArgs),
    /// Histogram of the learned fusion gain over a dataset.
    KgHist(KgHistArgs),
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct ConfigArg {
    /// key=value file of flag defaults; explicit flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct ModelArgs {
    /// Consecutive frames per input window.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..=16))]
    nf: u64,
    /// Resolution subsampling factor.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=3))]
    nr: u64,
    /// fusion or thermal_only.
    #[arg(long, default_value = "fusion")]
    variant: Variant,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct Optim {
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    /// berhu or mse.
    #[arg(long, default_value = "berhu")]
    loss: LossKind,
    /// Keep sample order fixed instead of reshuffling each epoch.
    #[arg(long)]
    no_shuffle: bool,
    /// Base seed for initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct EvalArgs {
    /// Environment whose acquisitions become the folds.
    #[arg(long, default_value = "garden")]
    held_env: String,
    /// Training pool per fold: all (every other acquisition) or held_out
    /// (only the held-out environment's other acquisitions).
    #[arg(long, default_value = "all")]
    pool: TrainingPool,
    /// Folds trained in parallel (0: one per available core).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    config: ConfigArg,
    /// Dataset root to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "garden")]
    env: String,
    #[arg(long, default_value_t = 6)]
    acquisitions: usize,
    /// Index of the first acquisition; later indices give fresh runs
    /// through the same scene.
    #[arg(long, default_value_t = 0)]
    first_index: usize,
    #[arg(long, default_value_t = 20)]
    segments: usize,
    /// Seconds per constant-speed segment.
    #[arg(long, default_value_t = 4.0)]
    duration: f64,
    /// low, moderate or high.
    #[arg(long, default_value = "moderate")]
    clutter: Clutter,
    /// Explicit blob count; overrides --clutter.
    #[arg(long)]
    blobs: Option<usize>,
    /// Ambient temperature, °C.
    #[arg(long, default_value_t = 20.0)]
    ambient: f64,
    /// Pixel noise std, °C.
    #[arg(long, default_value_t = 0.3)]
    pixel_noise: f64,
    /// Gyro white noise std, deg/s.
    #[arg(long, default_value_t = 1.0)]
    gyro_noise: f64,
    /// Constant gyro bias, deg/s.
    #[arg(long, default_value_t = 2.0)]
    gyro_bias: f64,
    #[arg(long, default_value_t = 8.0)]
    fps: f64,
    #[arg(long, default_value_t = 55.0)]
    h_fov: f64,
    #[arg(long, default_value_t = 35.0)]
    v_fov: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    config: ConfigArg,
    /// Dataset root containing manifest.json.
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    optim: Optim,
    /// Train only on these environments (comma separated; default all).
    #[arg(long, value_delimiter = ',')]
    env: Vec<String>,
    /// Acquisition ids to leave out of training (comma separated).
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<String>,
    /// Initial parameters: random (seeded) or zero.
    #[arg(long, default_value = "random", value_parser = ["random", "zero"])]
    init: String,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct KfoldArgs {
    #[command(flatten)]
    #[serde(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    optim: Optim,
    #[command(flatten)]
    #[serde(flatten)]
    eval: EvalArgs,
    /// Also write each fold's trained weights.
    #[arg(long)]
    save_models: bool,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct SweepNfArgs {
    #[command(flatten)]
    #[serde(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Frame counts to sweep.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5,6")]
    nf_list: Vec<usize>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=3))]
    nr: u64,
    #[command(flatten)]
    #[serde(flatten)]
    optim: Optim,
    #[command(flatten)]
    #[serde(flatten)]
    eval: EvalArgs,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct SweepNrArgs {
    #[command(flatten)]
    #[serde(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Subsampling factors to sweep.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    nr_list: Vec<usize>,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..=16))]
    nf: u64,
    #[command(flatten)]
    #[serde(flatten)]
    optim: Optim,
    #[command(flatten)]
    #[serde(flatten)]
    eval: EvalArgs,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct ComplexityArgs {
    #[command(flatten)]
    #[serde(flatten)]
    config: ConfigArg,
    /// Frame counts (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "3")]
    nf: Vec<usize>,
    /// Subsampling factors (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    nr: Vec<usize>,
    #[arg(long, default_value = "fusion")]
    variant: Variant,
    /// Also write complexity.csv here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct DriftArgs {
    #[command(flatten)]
    #[serde(flatten)]
    config: ConfigArg,
    /// Weight file written by train or kfold.
    #[arg(long)]
    model: PathBuf,
    /// Dataset root holding the acquisition.
    #[arg(long)]
    data: PathBuf,
    /// Acquisition id (file stem); defaults to the first in the manifest.
    #[arg(long)]
    acquisition: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct KgHistArgs {
    #[command(flatten)]
    #[serde(flatten)]
    config: ConfigArg,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Restrict to these environments (comma separated; default all).
    #[arg(long, value_delimiter = ',')]
    env: Vec<String>,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..=1000))]
    bins: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let argv = match config::expand_argv(&Cli::command(), std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(commands::EXIT_USAGE);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(commands::EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
