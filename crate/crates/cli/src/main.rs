//! `sagan`: dataset preparation, CFA simulation, training, reconstruction,
//! evaluation, gradient checks and benchmarking.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;
mod config;
mod fail;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::fail::{Fail, EXIT_USAGE};

#[derive(Parser, Debug)]
#[command(
    name = "sagan",
    version,
    about = "Joint demosaicing and denoising for Nona-Bayer captures"
)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cut every image of a directory into square patches.
    Patches(PatchesArgs),
    /// Sample an RGB image through a CFA pattern.
    Mosaic(MosaicArgs),
    /// Add Gaussian read noise to a mosaic.
    Noise(NoiseArgs),
    /// Bin a Nona-Bayer mosaic to Bayer at a third of the resolution.
    Bin(BinArgs),
    /// Train a generator (and discriminator) on ground-truth patches.
    Train(TrainArgs),
    /// Reconstruct an RGB image from a mosaic with a trained generator.
    Reconstruct(ReconstructArgs),
    /// Score a generator on a dataset at one or more noise levels.
    Evaluate(EvaluateArgs),
    /// Compare analytic gradients against central differences per layer class.
    Gradcheck(GradcheckArgs),
    /// Report parameter counts and inference speed.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Desk-scale model (widths / 8, k = 5, r = 4).
    #[arg(long)]
    pub toy: bool,
    /// Generator widths per level, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    /// Attention kernel extent.
    #[arg(long)]
    pub k: Option<usize>,
    /// Squeeze-and-excitation reduction ratio.
    #[arg(long)]
    pub r: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PatternArgs {
    /// CFA kind: bayer, quad or nona (optionally `nona-grbg` etc).
    #[arg(long)]
    pub pattern: Option<String>,
    /// Bayer base cell: rggb, grbg, gbrg or bggr.
    #[arg(long)]
    pub base: Option<String>,
}

#[derive(Args, Debug)]
pub struct PatchesArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Patch side, 128 unless configured.
    #[arg(long)]
    pub size: Option<usize>,
    /// Defaults to the patch size (non-overlapping).
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Args, Debug)]
pub struct MosaicArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub pattern: PatternArgs,
}

#[derive(Args, Debug)]
pub struct NoiseArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Standard deviation in 8-bit units.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct BinArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory of ground-truth images.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Train on this many generated scenes instead of a dataset.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Output directory for checkpoints, loss.csv and model.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda_g: Option<f64>,
    /// Training noise levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,
    /// basenet, basegan, sanwp, san or sagan.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Save a checkpoint pair every this many steps (0 disables).
    #[arg(long)]
    pub checkpoint_interval: Option<u64>,
    /// After training, print the mean PSNR on the training patches.
    #[arg(long)]
    pub report_psnr: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub pattern: PatternArgs,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Generator checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Model description; defaults to `model.json` beside the checkpoint.
    #[arg(long)]
    pub model_json: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Directory of ground-truth images.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub model_json: Option<PathBuf>,
    /// Directory receiving report.json and report.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub pattern: PatternArgs,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Check layers at desk scale (the only supported scale).
    #[arg(long)]
    pub toy: bool,
    /// Seed for the random inputs and projections.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Side of the square input mosaic.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub model: ModelArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), Fail> {
    let cfg = config::RunConfig::load_opt(cli.config.as_deref())?;
    match cli.command {
        Command::Patches(a) => commands::patches(&cfg, a),
        Command::Mosaic(a) => commands::mosaic(&cfg, a),
        Command::Noise(a) => commands::noise(&cfg, a),
        Command::Bin(a) => commands::bin(a),
        Command::Train(a) => commands::train(&cfg, a),
        Command::Reconstruct(a) => commands::reconstruct(&cfg, a),
        Command::Evaluate(a) => commands::evaluate(&cfg, a),
        Command::Gradcheck(a) => commands::gradcheck(&cfg, a),
        Command::Bench(a) => commands::bench(&cfg, a),
    }
}
