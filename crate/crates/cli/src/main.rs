//! `flowcast`: data generation, training, perturbation, forecasting, metrics
//! and cost benchmarks from the command line.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowcast_core::{Activation, FieldKind, NoiseFamily};

use crate::config::{Components, Widths};

#[derive(Parser, Debug)]
#[command(name = "flowcast", version, about = "Probabilistic forecasting with flow matching")]
pub struct Cli {
    /// `key = value` file; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a paired dataset.
    GenData(GenDataArgs),
    /// Train a forecast or gaussify velocity field.
    Train(TrainArgs),
    /// Propagate an ensemble with a forecast field.
    Forecast(ForecastArgs),
    /// Build an ensemble of perturbed copies of one state.
    Perturb(PerturbArgs),
    /// Compare a predicted ensemble with a reference ensemble.
    Metrics(MetricsArgs),
    /// Cost comparison of Euler and Euler-Maruyama.
    Bench(BenchArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generator {
    PpGaussian,
    PpUniformY2,
    Blob,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    pub generator: Generator,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// RK4 step for predator-prey.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Blob grid side length.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub jitter: Option<f64>,
    /// Predator range for pp-uniform-y2.
    #[arg(long)]
    pub lo: Option<f64>,
    #[arg(long)]
    pub hi: Option<f64>,
    /// Also write the pairs as CSV (vector states only).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    pub mode: FieldKind,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss log; defaults to `<out>.log`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Hidden widths, e.g. `128,128,128`.
    #[arg(long)]
    pub hidden: Option<Widths>,
    #[arg(long)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Where the starting state(s) come from.
#[derive(Args, Debug)]
pub struct SourceArgs {
    /// Comma separated components of one state.
    #[arg(long, conflicts_with = "input")]
    pub state: Option<Components>,
    /// Dataset or ensemble file; its initial states are used.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Which initial state of `--input` to perturb.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
}

#[derive(Args, Debug)]
pub struct NoiseArgs {
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub members: Option<usize>,
    #[arg(long)]
    pub noise: Option<NoiseFamily>,
}

#[derive(Args, Debug)]
pub struct ForecastArgs {
    /// Forecast checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Gaussify checkpoint; perturbs the source state before forecasting.
    #[arg(long)]
    pub perturb: Option<PathBuf>,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Scatter (vector states) or per-pixel mean/SD (grids).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Scatter plot of initial and forecast members.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PerturbArgs {
    /// Gaussify checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Reference ensemble; a dataset file contributes its final states.
    #[arg(long)]
    pub truth: PathBuf,
    /// Value range of the data, used by SSIM.
    #[arg(long)]
    pub range: Option<f64>,
    /// Label for the CSV row; defaults to the prediction's file stem.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
