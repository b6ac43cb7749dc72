//! `gesturekit` command-line tool.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gesturekit::dataset::Split;
use gesturekit::models::Architecture;
use gesturekit::GestureClass;

#[derive(Debug, Parser)]
#[command(name = "gesturekit", version, about = "Synthetic FMCW radar gesture recognition")]
pub struct Cli {
    /// Seed for generation, initialisation and shuffling [default: 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesise a labelled RSA dataset, or one raw recording with --raw.
    Gen(GenArgs),
    /// Turn a raw FMC1 recording into an RSA1 image.
    Process(ProcessArgs),
    /// Train a classifier on the train split and validate on the val split.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write the report CSV.
    Eval(EvalArgs),
    /// Classify one RSA1 file.
    Infer(InferArgs),
    /// Run the gradient, detector and pipeline checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Dataset directory.
    #[arg(long, required_unless_present = "raw", conflicts_with = "raw")]
    pub out: Option<PathBuf>,
    /// Recordings per class.
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Random crops per recording.
    #[arg(long)]
    pub crops: Option<usize>,
    /// Fraction of each class's recordings held out for validation.
    #[arg(long, default_value_t = 0.3)]
    pub val_ratio: f64,
    /// JSON generator config; flags above override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write one raw 128-frame recording (FMC1) instead of a dataset.
    #[arg(long)]
    pub raw: Option<PathBuf>,
    /// Gesture of the raw recording.
    #[arg(long, default_value = "LEFT", requires = "raw")]
    pub gesture: GestureClass,
}

#[derive(Debug, Args)]
pub struct ProcessArgs {
    /// FMC1 file with at least 128 frames.
    #[arg(long)]
    pub input: PathBuf,
    /// RSA1 output file.
    #[arg(long)]
    pub output: PathBuf,
    /// First frame of the 128-frame window.
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    /// Label byte to store.
    #[arg(long)]
    pub label: Option<GestureClass>,
    /// Also write one channel as an 8-bit PGM.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..3))]
    pub channel: u8,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub arch: Architecture,
    #[arg(long)]
    pub data: PathBuf,
    /// GNN1 checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON training schedule.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Per-epoch history CSV [default: <out>.history.csv].
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Which samples to score.
    #[arg(long, default_value = "val", value_parser = parse_split)]
    pub split: SplitSel,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSel {
    All,
    Only(Split),
}

fn parse_split(s: &str) -> Result<SplitSel, String> {
    if s == "all" {
        return Ok(SplitSel::All);
    }
    s.parse().map(SplitSel::Only).map_err(|_| "expected train, val, test or all".to_string())
}

pub enum Failure {
    Usage(String),
    Data(String),
    Acceptance,
}

impl From<gesturekit::Error> for Failure {
    fn from(e: gesturekit::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    tune_allocator();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Acceptance) => ExitCode::from(3),
    }
}

/// Training allocates and frees tens of megabytes per layer and step; serving those
/// from the heap instead of fresh mmaps avoids page-faulting them in every time.
#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn tune_allocator() {
    // SAFETY: mallopt only adjusts allocator thresholds and is called before any threads start.
    unsafe {
        libc::mallopt(libc::M_MMAP_MAX, 0);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn tune_allocator() {}
