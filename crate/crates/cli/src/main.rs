//! `dart`: pre-train the toy LM, fine-tune few-shot classifiers with DART
//! and its baselines, sweep hyperparameters and analyze trained prompts.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure,
//! 4 artifact mismatch, 1 anything else.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dart_core::harness::TaskKind;
use dart_core::DartError;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "dart", version, about = "Differentiable prompt tuning on a toy masked LM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pre-train a toy masked LM from a JSON config.
    Pretrain(PretrainArgs),
    /// Run one method over the K-shot episode protocol.
    Finetune(FinetuneArgs),
    /// Grid-search hyperparameters per seed, selecting on dev.
    Sweep(SweepArgs),
    /// R_D ratios, label-slot neighbors or raw [MASK] states.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MethodArgs {
    /// dart, head, fixed, or an ablation arm by name.
    #[arg(long, default_value = "dart")]
    pub method: String,
    #[arg(long)]
    pub no_fluency: bool,
    #[arg(long)]
    pub fixed_template: bool,
    #[arg(long)]
    pub fixed_label: bool,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub task: TaskKind,
    #[command(flatten)]
    pub method: MethodArgs,
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    /// Number of episode seeds.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub task: TaskKind,
    #[command(flatten)]
    pub method: MethodArgs,
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seeds trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyzeKind {
    Rd,
    Neighbors,
    Export,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub what: AnalyzeKind,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "easy")]
    pub task: TaskKind,
    #[command(flatten)]
    pub method: MethodArgs,
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    #[arg(long, default_value_t = 13)]
    pub seed: u64,
    /// Global steps at which to capture [MASK] states.
    #[arg(long, value_delimiter = ',', default_values_t = dart_core::analysis::DEFAULT_CAPTURE_STEPS)]
    pub steps: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(e: &DartError) -> u8 {
    match e {
        DartError::Config(_)
        | DartError::Validation(_)
        | DartError::Capacity(_)
        | DartError::Length { .. }
        | DartError::Index { .. }
        | DartError::Dimension { .. }
        | DartError::Json(_) => 2,
        DartError::Numeric(_) => 3,
        DartError::Mismatch(_) | DartError::Format(_) => 4,
        DartError::Io(_) | DartError::Contract(_) => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Analyze(a) => commands::analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
