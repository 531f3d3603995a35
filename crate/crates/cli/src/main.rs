//! Command-line entry point: synthetic dataset generation, training with
//! reproducible run directories, evaluation against baselines, and the
//! model-wide gradient check.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 runtime failure,
//! 3 check failure.

mod commands;
mod manifest;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "rnp", version, about = "Recurrent neural processes for time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as CSV plus a metadata JSON.
    Synth(SynthArgs),
    /// Train a model, writing manifest, metrics, and checkpoints to a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint: metrics JSON on stdout, predictions CSV on disk.
    Eval(EvalArgs),
    /// Finite-difference check of the full model gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Generator: sine-drift, two-scale, or drives.
    #[arg(long)]
    pub kind: String,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path; metadata goes to <out>.meta.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Cycles per step of the base sine (sine-drift).
    #[arg(long, default_value_t = 0.02)]
    pub base_freq: f64,
    /// Amplitude modulation period in steps; 0 keeps it constant (sine-drift).
    #[arg(long, default_value_t = 400.0)]
    pub amp_drift_period: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise_std: f64,
    /// Fast cycle period in steps (two-scale).
    #[arg(long, default_value_t = 16.0)]
    pub fast_period: f64,
    /// Slow cycle period in steps (two-scale).
    #[arg(long, default_value_t = 256.0)]
    pub slow_period: f64,
    /// Slow cycle amplitude; 0 removes the slow component (two-scale).
    #[arg(long, default_value_t = 3.0)]
    pub slow_amp: f64,
}

#[derive(Args, Clone)]
pub struct DataArgs {
    /// Input dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "y")]
    pub target_column: String,
    /// Comma-separated input column names (or 0-based indices without a header).
    #[arg(long, default_value = "x", value_delimiter = ',')]
    pub input_columns: Vec<String>,
    #[arg(long, default_value_t = false)]
    pub no_header: bool,
    #[arg(long, default_value = ",")]
    pub delimiter: String,
    /// Ingest only the first N data rows.
    #[arg(long)]
    pub row_limit: Option<usize>,
    /// Chronological train/val/test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1", value_delimiter = ',')]
    pub splits: Vec<f64>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Run directory (created). Relative paths resolve under $RNP_RUN_DIR when set.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,

    // model
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 32)]
    pub latent: usize,
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    #[arg(long, default_value_t = false)]
    pub bidirectional: std::primitive::bool,
    /// Decoder kind: recurrent or feedforward.
    #[arg(long, default_value = "recurrent")]
    pub decoder: String,
    /// Keep the deterministic path alongside the stochastic one.
    #[arg(long, default_value_t = true)]
    pub det_path: std::primitive::bool,
    /// Append the normalized window start time to encoder inputs.
    #[arg(long, default_value_t = false)]
    pub condition_on_time: std::primitive::bool,

    // training
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1)]
    pub steps_per_epoch: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 20)]
    pub context_len: usize,
    #[arg(long, default_value_t = 15)]
    pub target_len: usize,
    #[arg(long, default_value_t = 2)]
    pub context_count_min: usize,
    #[arg(long, default_value_t = 5)]
    pub context_count_max: usize,
    #[arg(long, default_value_t = 1.0)]
    pub kl_weight: f64,
    #[arg(long, default_value_t = 5.0)]
    pub grad_clip: f64,
    /// Checkpoint every N epochs (0 = only at the end).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Segment to evaluate: train, val, or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Output directory for predictions.csv and metrics.json
    /// (defaults to the checkpoint's directory).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Samples drawn per step for the prediction interval.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// Prediction interval level.
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,
    /// Baseline for normalized MSE: persistence or lstm.
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long, default_value_t = 50)]
    pub baseline_hidden: usize,
    #[arg(long, default_value_t = 1)]
    pub baseline_layers: usize,
    #[arg(long, default_value_t = 400)]
    pub baseline_steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub baseline_lr: f64,
    #[arg(long, default_value_t = 4)]
    pub context_count: usize,
    #[arg(long, default_value_t = 20)]
    pub context_len: usize,
    /// one-step (teacher forced) or autoregressive rollout.
    #[arg(long, default_value = "one-step")]
    pub mode: String,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Add +1 to every analytic gradient to confirm the checker fails.
    #[arg(long, default_value_t = false)]
    pub inject_grad_fault: std::primitive::bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Usage/config errors versus runtime failures carry different exit codes.
pub enum CmdError {
    Usage(String),
    Runtime(String),
    CheckFailed(String),
}

impl CmdError {
    fn exit(&self) -> ExitCode {
        let (code, label, msg) = match self {
            CmdError::Usage(m) => (EXIT_USAGE, "usage error", m),
            CmdError::Runtime(m) => (EXIT_RUNTIME, "error", m),
            CmdError::CheckFailed(m) => (EXIT_CHECK_FAILED, "check failed", m),
        };
        eprintln!("{}: {}", label, msg);
        ExitCode::from(code)
    }
}

/// Picks the provided seed or draws one from OS entropy; either way the
/// caller records the value.
pub fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random::<u64>)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not errors
            if e.use_stderr() {
                eprint!("{}", e);
                return ExitCode::from(EXIT_USAGE);
            }
            print!("{}", e);
            return ExitCode::from(EXIT_OK);
        }
    };
    let result = match cli.command {
        Command::Synth(args) => commands::synth::run(&args),
        Command::Train(args) => commands::train::run(&args),
        Command::Eval(args) => commands::eval::run(&args),
        Command::Gradcheck(args) => commands::gradcheck::run(&args),
    };
    match result {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => e.exit(),
    }
}
