//! `sourcenet` command-line front end: dataset generation, the two training
//! stages, evaluation and explanation.
//!
//! Exit codes: 0 success, 1 usage, 2 IO or format, 3 numeric failure.

pub mod commands;
pub mod config;

pub use config::RunConfig;

use clap::{Args, Parser, Subcommand};
use sourcenet_core::container::ContainerError;
use sourcenet_nn::checkpoint::CheckpointError;
use sourcenet_train::TrainError;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SEED_ENV: &str = "SOURCENET_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<ContainerError> for CliError {
    fn from(e: ContainerError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            TrainError::Io(_) | TrainError::Format(_) | TrainError::Checkpoint(_) | TrainError::Model(_) => {
                CliError::Io(e.to_string())
            }
            TrainError::Config(_) | TrainError::EmptySplit(_) | TrainError::Index(_) => CliError::Usage(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sourcenet", version, about = "Moment tensor inversion from station sets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Run config (JSON); the desk preset when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed (fallback: SOURCENET_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset.
    Gen(GenArgs),
    /// Build an ambient-noise library.
    NoiseLib(NoiseLibArgs),
    /// Train from scratch on synthetic data.
    Pretrain(TrainArgs),
    /// Continue training a checkpoint on target-domain data.
    Finetune(TrainArgs),
    /// Metrics, azimuth profile and report for a dataset.
    Eval(EvalArgs),
    /// Grad-CAM saliency for one event.
    Explain(ExplainArgs),
    /// Export pooled latent vectors.
    Latents(LatentsArgs),
    /// Re-render a report from `eval` output.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// synthetic or pseudo_real.
    #[arg(long, default_value = "synthetic")]
    pub domain: String,
    /// Noise library from `noise-lib`; built from the config when absent.
    #[arg(long)]
    pub noise: Option<PathBuf>,
    /// Worker threads; 1 runs serially, 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct NoiseLibArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for best.snck, last.snck and history.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Starting checkpoint (required for finetune).
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Continue from `<out>/last.snck`.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// full, no_scalar or deepsets (pretrain only).
    #[arg(long)]
    pub variant: Option<String>,
    /// JSON-lines catalog whose labels and geometry replace the records'.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Subset {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Which part of the checkpoint's split to score.
    #[arg(long, value_enum, default_value_t = Subset::All)]
    pub subset: Subset,
    /// Aggregate transformer self-attention instead of pooling weights.
    #[arg(long)]
    pub self_attention: bool,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub event: String,
    /// Station index; every station when absent.
    #[arg(long)]
    pub station: Option<usize>,
    /// mw or dev1..dev5.
    #[arg(long, default_value = "mw")]
    pub target: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LatentsArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// metrics.csv written by `eval`.
    #[arg(long)]
    pub metrics: PathBuf,
    /// azimuth.json written by `eval`.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "sourcenet report")]
    pub title: String,
}

/// Config from `--config` (desk preset otherwise) with the seed resolved as
/// flag, then `SOURCENET_SEED`, then the config value.
pub fn resolve_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::desk(),
    };
    let env = match std::env::var(SEED_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<u64>()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?,
        ),
        Err(_) => None,
    };
    if let Some(seed) = common.seed.or(env) {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::NoiseLib(a) => commands::noise_lib(&a),
        Command::Pretrain(a) => commands::train(&a, sourcenet_train::Stage::Pretrain),
        Command::Finetune(a) => commands::train(&a, sourcenet_train::Stage::Finetune),
        Command::Eval(a) => commands::eval(&a),
        Command::Explain(a) => commands::explain(&a),
        Command::Latents(a) => commands::latents(&a),
        Command::Report(a) => commands::report(&a),
    }
}
