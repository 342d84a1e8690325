//! `metasr` — train, upscale, evaluate, and compare.
//!
//! Exit codes partition error classes: 0 success, 2 usage/config errors,
//! 3 data/model errors (clap's own usage failures also exit 2).

mod commands;
mod grid;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "metasr",
    about = "Arbitrary-scale single-image super-resolution",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a directory of images.
    Train(TrainArgs),
    /// Super-resolve one image by an arbitrary factor >= 1.
    Upscale(UpscaleArgs),
    /// Score a checkpoint against the bicubic baseline on a dataset.
    Evaluate(EvaluateArgs),
    /// Render a bicubic-vs-model tile grid across several scales.
    Grid(GridArgs),
}

#[derive(clap::Args)]
pub struct TrainArgs {
    /// Directory of training images (optional manifest.txt).
    #[arg(long)]
    pub data: PathBuf,
    /// key=value configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for checkpoints and the loss log.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional pretraining corpus; runs the same schedule first.
    #[arg(long)]
    pub pretrain: Option<PathBuf>,
    /// MSRG file with feature-extractor weights (entries under "phi.").
    #[arg(long)]
    pub perceptual_weights: Option<PathBuf>,
    /// Override any config key (repeatable), e.g. --set total_updates=5.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(clap::Args)]
pub struct UpscaleArgs {
    /// Checkpoint to run.
    #[arg(long)]
    pub model: PathBuf,
    /// Upscaling factor (>= 1.0; non-integers welcome).
    #[arg(long)]
    pub scale: f64,
    /// Input image.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output image.
    #[arg(long = "out")]
    pub output: PathBuf,
}

#[derive(clap::Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub scale: f64,
    /// Interpolation baseline to compare against (only "bicubic").
    #[arg(long, default_value = "bicubic")]
    pub baseline: String,
    /// Output CSV path.
    #[arg(long = "out")]
    pub output: PathBuf,
    /// Crop fraction for the maximal-information crop.
    #[arg(long, default_value_t = 0.5)]
    pub crop_fraction: f64,
}

#[derive(clap::Args)]
pub struct GridArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Comma-separated scale list, e.g. "1.5,2.0,2.5,3.0,3.5,4.0".
    #[arg(long)]
    pub scales: String,
    #[arg(long = "out")]
    pub output: PathBuf,
    /// HR image the input was derived from; enables PSNR/SSIM annotations.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

/// Error classes mapped to exit codes.
pub enum CmdError {
    /// Bad flags, config keys, or argument values: exit 2.
    Usage(String),
    /// Missing or broken data, models, or outputs: exit 3.
    Data(String),
}

impl CmdError {
    fn code(&self) -> u8 {
        match self {
            CmdError::Usage(_) => 2,
            CmdError::Data(_) => 3,
        }
    }
    fn message(&self) -> &str {
        match self {
            CmdError::Usage(m) | CmdError::Data(m) => m,
        }
    }
}

impl From<metasr::config::ConfigError> for CmdError {
    fn from(e: metasr::config::ConfigError) -> Self {
        CmdError::Usage(e.to_string())
    }
}

impl From<metasr::image::ImageError> for CmdError {
    fn from(e: metasr::image::ImageError) -> Self {
        match e {
            metasr::image::ImageError::BadScale(_) => CmdError::Usage(e.to_string()),
            other => CmdError::Data(other.to_string()),
        }
    }
}

impl From<metasr::train::TrainError> for CmdError {
    fn from(e: metasr::train::TrainError) -> Self {
        CmdError::Data(e.to_string())
    }
}

impl From<metasr::nn::CheckpointError> for CmdError {
    fn from(e: metasr::nn::CheckpointError) -> Self {
        CmdError::Data(e.to_string())
    }
}

impl From<metasr::metrics::MetricError> for CmdError {
    fn from(e: metasr::metrics::MetricError) -> Self {
        CmdError::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => commands::train(args),
        Command::Upscale(args) => commands::upscale(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Grid(args) => grid::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
