//! Command-line front end: `verify`, `train`, `bench`, `estimate` and
//! `gen-data`.

mod commands;
mod verify;

pub use commands::{estimate_report, EstimateReport};
pub use verify::{run_verify, CheckResult, VerifyConfig, VerifyReport, FD_STEP, FD_TOLERANCE};

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::datagen::PatternKind;
use crate::error::Error;
use crate::losses::KappaAxis;
use crate::neuron::{EstimateMode, NeuronParams};
use crate::numerics::workers_from_env;

pub const EXIT_OK: u8 = 0;
pub const EXIT_PROPERTY_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "mpe-psn", version, about = "Parallel spiking neurons with membrane-potential estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the oracle-equivalence and gradient-check suites.
    Verify(VerifyArgs),
    /// Train the toy classifier and write the per-epoch log.
    Train(TrainArgs),
    /// Time sequential vs parallel forward passes over a (T, N) grid.
    Bench(BenchArgs),
    /// Inspect the Bernoulli membrane estimator on one input.
    Estimate(EstimateArgs),
    /// Write a synthetic dataset to CSV.
    GenData(GenDataArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

/// Neuron constants shared by every subcommand that simulates neurons.
#[derive(Debug, Clone, Args)]
pub struct NeuronArgs {
    /// Membrane decay constant.
    #[arg(long, default_value_t = 0.25)]
    pub tau_m: f64,
    /// Initial firing threshold.
    #[arg(long, default_value_t = 1.0)]
    pub v_th_init: f64,
    /// Half-width of the triangular surrogate gradient.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
}

impl NeuronArgs {
    pub fn params(&self) -> crate::Result<NeuronParams> {
        NeuronParams::new(self.tau_m, self.v_th_init, self.alpha)
    }
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Random inputs per equivalence check.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Largest T drawn for random inputs.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    pub time_steps: u64,
    /// Largest N drawn for random inputs.
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub neurons: u64,
    /// Largest B drawn for random inputs.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: u64,
    #[command(flatten)]
    pub neuron: NeuronArgs,
    /// Worker threads (falls back to MPE_PSN_WORKERS).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Machine-readable report.
    #[arg(long, default_value = "verify_report.csv")]
    pub out: PathBuf,
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Load this dataset CSV instead of generating one; the first 80% of
    /// samples train, the rest test.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 8)]
    pub time_steps: usize,
    /// Input features N0.
    #[arg(long, default_value_t = 16)]
    pub features: usize,
    #[arg(long, default_value_t = 128)]
    pub samples_per_class: usize,
    #[arg(long, default_value_t = 0.3)]
    pub noise_std: f64,
    #[arg(long, value_enum, default_value_t = PatternKind::RateCoded)]
    pub pattern: PatternKind,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Width of each spiking layer.
    #[arg(long, default_value_t = 32)]
    pub neurons: usize,
    /// Number of spiking layers.
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, value_enum, default_value_t = crate::network::NeuronKind::MpePsn)]
    pub neuron_kind: crate::network::NeuronKind,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub neuron: NeuronArgs,
    /// Weight of the membrane loss in the total loss.
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value_t = KappaAxis::Time)]
    pub kappa_axis: KappaAxis,
    #[arg(long, default_value_t = 1.0)]
    pub kappa_init: f64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Worker threads (falls back to MPE_PSN_WORKERS).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_enum, default_value_t = EstimateMode::Sampled)]
    pub mode: EstimateMode,
    /// 0: I_t = W o_t; 1: I_t = W o_{t-1}.
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
    pub synaptic_delay: u8,
    /// `off` weights the membrane loss by zero (still logged).
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    pub mem_loss: OnOff,
    /// Training log CSV.
    #[arg(long, default_value = "train_log.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// T grid, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 4, 8, 16, 32])]
    pub time_steps: Vec<usize>,
    /// N grid, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize << 10, 1 << 12, 1 << 14, 1 << 16, 1 << 18])]
    pub neurons: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Worker counts, comma separated or repeated; one CSV per count
    /// (falls back to MPE_PSN_WORKERS, then 4).
    #[arg(long, value_delimiter = ',')]
    pub workers: Vec<usize>,
    /// Timed repetitions per point (at least 5), after one warmup.
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Records CSV; the ratio matrix goes next to it.
    #[arg(long, default_value = "bench.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    /// Input currents as a tensor CSV of shape [T, B, N]; random U(-2, 2)
    /// when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub time_steps: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 64)]
    pub neurons: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub neuron: NeuronArgs,
    #[arg(long, value_enum, default_value_t = EstimateMode::Sampled)]
    pub mode: EstimateMode,
    /// Optional per-step CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value = "dataset.csv")]
    pub out: PathBuf,
}

/// Outcome of a subcommand that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    PropertyFailure,
}

fn resolve_workers(explicit: Option<usize>) -> crate::Result<usize> {
    match explicit.or_else(workers_from_env) {
        Some(0) => Err(Error::invalid("worker count must be at least 1")),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn run(cli: Cli) -> crate::Result<Outcome> {
    match cli.command {
        Command::Verify(a) => commands::verify(&a),
        Command::Train(a) => commands::train(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Estimate(a) => commands::estimate(&a),
        Command::GenData(a) => commands::gen_data(&a),
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_)
        | Error::InvalidShape { .. }
        | Error::KappaLength { .. }
        | Error::Parse { .. } => EXIT_USAGE,
        _ => EXIT_PROPERTY_FAILURE,
    }
}

/// Parses `args`, runs the command and maps the result to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match run(cli) {
        Ok(Outcome::Success) => ExitCode::from(EXIT_OK),
        Ok(Outcome::PropertyFailure) => ExitCode::from(EXIT_PROPERTY_FAILURE),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
