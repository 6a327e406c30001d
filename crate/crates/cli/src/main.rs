//! `vhd`: synthetic data, training, evaluation and diagnostics for the
//! audio-visual highlight detector.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use highlight_core::eval::Protocol;
use highlight_core::Error;

#[derive(Parser)]
#[command(
    name = "vhd",
    version,
    about = "Audio-visual video highlight detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic two-class dataset (feature files + manifest.json).
    Synth(SynthArgs),
    /// Train on the manifest's train split.
    Train(TrainArgs),
    /// Score a split and write a mAP report.
    Eval(EvalArgs),
    /// Write per-video segment scores as CSV.
    Predict(DumpArgs),
    /// Write per-video segment embeddings and labels as CSV.
    Embed(DumpArgs),
    /// Compare analytic and finite-difference gradients of the training loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Total number of videos, test split included.
    #[arg(long, default_value_t = 70)]
    pub videos: usize,
    /// Videos assigned to the test split [default: min(20, videos / 2)].
    #[arg(long)]
    pub test_videos: Option<usize>,
    /// Segments per video.
    #[arg(long, default_value_t = 40)]
    pub segments: usize,
    /// Visual feature width.
    #[arg(long, default_value_t = 32)]
    pub dv: usize,
    /// Audio feature width.
    #[arg(long, default_value_t = 32)]
    pub da: usize,
    /// Distance between the class centres.
    #[arg(long, default_value_t = 4.0)]
    pub sep: f64,
    /// Per-segment noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 3)]
    pub categories: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ConfigArgs {
    /// Run configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable), e.g. `--set lr=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Run seed; overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for checkpoint.bin, config.json and history.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run configuration [default: config.json beside the checkpoint].
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = Protocol::Map)]
    pub protocol: Protocol,
    /// Split to score: train, test or all.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct DumpArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Split to dump: train, test or all.
    #[arg(long, default_value = "all")]
    pub split: String,
    /// Output directory; one `<video id>.csv` per video.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Segments in the probe sequence (at most 8).
    #[arg(long, default_value_t = 6)]
    pub segments: usize,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Probe at most this many entries per tensor [default: all].
    #[arg(long)]
    pub max_coords: Option<usize>,
    /// Perturb the analytic gradient before comparing (fault injection).
    #[arg(long, hide = true)]
    pub corrupt_grad: bool,
}

/// Command failure with its exit code.
pub enum Failure {
    Core(Error),
    /// A check ran and did not pass.
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Core(Error::Io(e.into()))
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(Error::Config(_) | Error::Param(_) | Error::Contract(_)) => 2,
            Failure::Core(_) => 3,
            Failure::Check(_) => 4,
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("VHD_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::Config(format!(
            "VHD_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Embed(a) => commands::embed(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Core(e) => eprintln!("error: {e}"),
                Failure::Check(msg) => eprintln!("check failed: {msg}"),
            }
            ExitCode::from(f.exit_code())
        }
    }
}
