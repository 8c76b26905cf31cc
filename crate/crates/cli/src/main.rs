//! `longiprog`: generate synthetic data, train, evaluate, compare and explain
//! longitudinal progression models.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 I/O or file
//! format error, 4 numeric failure (divergence), 1 internal error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use longiprog::exec::Execution;
use longiprog::Error;

#[derive(Parser)]
#[command(name = "longiprog", version, about = "Longitudinal image prognosis workflow")]
struct Cli {
    /// Run every data-parallel stage on a single thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic longitudinal dataset (manifest.jsonl + PPM images).
    GenData(GenDataArgs),
    /// Train a model on the training split of a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint: report JSON, ROC CSV and SVG plot.
    Eval(EvalArgs),
    /// Paired De Long comparison of two evaluation reports.
    Compare(CompareArgs),
    /// Export class activation maps for one eye.
    Cam(CamArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub eyes: Option<usize>,
    #[arg(long)]
    pub progress_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub image_size: Option<usize>,
    /// TOML configuration; the [data] section holds generator parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Observed visits used: 1 selects the single-image baseline.
    #[arg(long)]
    pub timepoints: Option<usize>,
    /// Ablation: set every interval scale to 1.
    #[arg(long)]
    pub no_interval_scaling: bool,
    /// Train the variant that supports class activation maps.
    #[arg(long)]
    pub cam_head: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// History CSV; defaults to the checkpoint path with `.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// ROC CSV; defaults to the report path with `.roc.csv`.
    #[arg(long)]
    pub roc: Option<PathBuf>,
    /// SVG plot; defaults to the report path with `.roc.svg`.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Split to evaluate: train, val or test.
    #[arg(long)]
    pub split: Option<String>,
    /// Expected timepoints; rejected if the checkpoint differs.
    #[arg(long)]
    pub timepoints: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub report_a: PathBuf,
    #[arg(long)]
    pub report_b: PathBuf,
    #[arg(long, default_value = "comparison.json")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CamArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub eye_id: String,
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Input(_) | Error::Domain(_) | Error::Shape { .. } => 2,
        Error::Io { .. } | Error::Json { .. } | Error::Checkpoint(_) | Error::Preprocess(_) => 3,
        Error::Divergence { .. } | Error::NonFinite { .. } => 4,
        Error::Internal(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mode = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(a, mode),
        Command::Train(a) => commands::train_cmd(a, mode),
        Command::Eval(a) => commands::eval_cmd(a, mode),
        Command::Compare(a) => commands::compare_cmd(a),
        Command::Cam(a) => commands::cam_cmd(a, mode),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
