//! Command-line front end: `train`, `attack`, `metrics` and `report`.

mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{ModelKind, Settings};

#[derive(Debug, Parser)]
#[command(name = "jnd", version, about = "Just-noticeably-different adversarial images by regularized gradient descent")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a classifier (MNIST) or a detector (synthetic shapes).
    Train(TrainArgs),
    /// Attack images with a trained model.
    Attack(AttackArgs),
    /// Image-quality metrics between originals and adversarial images.
    Metrics(MetricsArgs),
    /// Confidence curves and a summary table for an attack run.
    Report(ReportArgs),
}

/// Settings shared by every command that takes a configuration.
#[derive(Debug, Args, Clone, Default)]
pub struct SettingsArgs {
    /// Flat `key = value` file; `#` starts a comment.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set alpha=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Classifier,
    Detector,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// MNIST directory (classifier only; the detector trains on generated scenes).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model container to write; a manifest is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub train_count: Option<usize>,
    #[arg(long)]
    pub test_count: Option<usize>,
    #[command(flatten)]
    pub settings: SettingsArgs,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Trained model container.
    #[arg(long)]
    pub model: PathBuf,
    /// MNIST directory to draw images from.
    #[arg(long, conflicts_with = "image")]
    pub data: Option<PathBuf>,
    /// A single PPM image.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// True label of `--image`; defaults to the model's prediction.
    #[arg(long, requires = "image")]
    pub label: Option<usize>,
    /// First dataset index (default: just past the training split).
    #[arg(long)]
    pub start: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Output directory, one subdirectory per image.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lambda_l2: Option<f64>,
    #[arg(long)]
    pub w_br: Option<f64>,
    #[arg(long)]
    pub w_tv: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub record_stride: Option<usize>,
    /// classifier | detector-full-output | detector-class-only
    #[arg(long)]
    pub mode: Option<String>,
    /// Detector target category (name or index).
    #[arg(long)]
    pub target_class: Option<String>,
    /// Detector target box `cx,cy,w,h`, normalized.
    #[arg(long)]
    pub target_box: Option<String>,
    /// Drop the L2, bound-range and total-variation terms.
    #[arg(long)]
    pub no_reg: bool,
    /// Stop at the first successful iteration instead of running to the limit.
    #[arg(long)]
    pub stop_at_success: bool,
    /// Replay the model over every stored iterate up to the first success.
    #[arg(long)]
    pub verify: bool,
    #[command(flatten)]
    pub settings: SettingsArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImageChoice {
    /// The image at the first successful iteration.
    Jnd,
    /// The image after the last iteration.
    Final,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Reference image(s), `.ppm` or `.tc`.
    #[arg(long, num_args = 1.., requires = "adversarial")]
    pub original: Vec<PathBuf>,
    /// Distorted image(s): one per original, or any number against a single original.
    #[arg(long, num_args = 1..)]
    pub adversarial: Vec<PathBuf>,
    /// Attack output directory. Repeatable.
    #[arg(long, num_args = 1.., conflicts_with_all = ["original", "adversarial"])]
    pub run: Vec<PathBuf>,
    /// Which adversarial image of a run to score.
    #[arg(long, value_enum, default_value_t = ImageChoice::Jnd)]
    pub which: ImageChoice,
    /// Write per-pair rows and per-run averages as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub settings: SettingsArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Attack output directory.
    #[arg(long)]
    pub run: PathBuf,
    /// Defaults to `<run>/report`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub settings: SettingsArgs,
}

/// Parses the process arguments and runs the chosen command.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match run_command(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

pub fn run_command(command: Command) -> crate::Result<()> {
    match command {
        Command::Train(a) => commands::train(&a),
        Command::Attack(a) => commands::attack(&a),
        Command::Metrics(a) => commands::metrics(&a),
        Command::Report(a) => commands::report(&a),
    }
}
