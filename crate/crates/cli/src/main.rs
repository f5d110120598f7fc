//! `changesplat` command-line interface.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Scene change detection with change-aware Gaussian splatting.
#[derive(Debug, Parser)]
#[command(name = "changesplat", version, about)]
pub struct Cli {
    /// Seed for every random choice (view sampling, densification, fixtures).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for rendering and training [default: available cores].
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic change scene (images, COLMAP model, ground truth).
    Synth(SynthArgs),
    /// Train the reference cloud from reference images and the COLMAP model.
    TrainRef(TrainRefArgs),
    /// Candidate change masks for pairs of renders and captured images.
    Masks(MasksArgs),
    /// Train change channels on the inference scene.
    TrainChange(TrainChangeArgs),
    /// Render RGB, change, alpha and change masks at registered or novel poses.
    Render(RenderArgs),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
    /// Run the full pipeline on a scene directory or a fixture manifest.
    Run(RunArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LayoutArg {
    Orbit,
    Hemisphere,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output scene directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Fixture manifest to start from [default: built-in orbit fixture].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Camera layout.
    #[arg(long, value_enum)]
    pub layout: Option<LayoutArg>,
    /// Total number of ground-truth Gaussians.
    #[arg(long)]
    pub gaussians: Option<usize>,
    /// Number of object clusters.
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub reference_views: Option<usize>,
    #[arg(long)]
    pub inference_views: Option<usize>,
    /// Held-out poses registered in the model but never captured.
    #[arg(long)]
    pub query_views: Option<usize>,
    /// Image width and height in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Drop every scripted change (a no-change scene).
    #[arg(long)]
    pub no_changes: bool,
}

#[derive(Debug, Args)]
pub struct TrainRefArgs {
    /// Scene directory with `reference/images` and `colmap`.
    #[arg(long)]
    pub scene: PathBuf,
    /// Output PLY.
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline configuration (TOML); its `[train]` table is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeatureArgs {
    /// Read features from `<dir>/<image stem>.csfm` (renders: `<stem>.render.csfm`).
    #[arg(long, requires = "feature_dim")]
    pub features_dir: Option<PathBuf>,
    /// Embedding dimension of external features.
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Patch size in pixels.
    #[arg(long)]
    pub patch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MasksArgs {
    /// Directory of rendered images, named like the captured images or
    /// `<stem>_rgb.png` as written by `render`.
    #[arg(long)]
    pub renders: PathBuf,
    /// Directory of captured images, matched to renders by file name.
    #[arg(long)]
    pub images: PathBuf,
    /// Output directory for candidate masks.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the feature and structure masks to `feature/` and `structure/`.
    #[arg(long)]
    pub components: bool,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Args)]
pub struct TrainChangeArgs {
    /// Scene directory with `inference/images`, `colmap` and (for
    /// `--augment`) `reference/images`.
    #[arg(long)]
    pub scene: PathBuf,
    /// Trained reference cloud.
    #[arg(long)]
    pub reference: PathBuf,
    /// Candidate masks named like the inference images [default: computed
    /// from reference renders].
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// Also run the reverse-comparison augmentation and fine-tune phase.
    #[arg(long)]
    pub augment: bool,
    /// Start the augmentation from this change cloud instead of training one.
    #[arg(long, requires = "augment")]
    pub change: Option<PathBuf>,
    /// Output PLY.
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Cloud to render.
    #[arg(long)]
    pub cloud: PathBuf,
    /// COLMAP model directory with the poses to render.
    #[arg(long, required_unless_present = "orbit")]
    pub colmap: Option<PathBuf>,
    /// Render only these image names from the model.
    #[arg(long, num_args = 1.., requires = "colmap")]
    pub views: Vec<String>,
    /// Render N novel poses on a ring around the cloud instead.
    #[arg(long, conflicts_with = "colmap")]
    pub orbit: Option<usize>,
    /// Ring radius for `--orbit`.
    #[arg(long, default_value_t = 3.0)]
    pub radius: f64,
    /// Ring elevation in degrees for `--orbit`.
    #[arg(long, default_value_t = 35.0)]
    pub elevation: f64,
    /// Image size for `--orbit`.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Horizontal field of view in degrees for `--orbit`.
    #[arg(long, default_value_t = 50.0)]
    pub fov: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted masks (PNG, thresholded at 0.5).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth masks with the same file names.
    #[arg(long)]
    pub gt: PathBuf,
    /// Continuous scores for AUROC [default: the predicted masks].
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scene directory (`reference/images`, `inference/images`, `colmap`, optional `gt`).
    #[arg(long, required_unless_present = "fixture", conflicts_with = "fixture")]
    pub scene: Option<PathBuf>,
    /// Build the scene from a fixture manifest instead.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Resume from a saved reference cloud.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Resume from a saved change cloud (skips the first change phase).
    #[arg(long)]
    pub change: Option<PathBuf>,
    /// Skip augmentation and the fine-tune phase.
    #[arg(long)]
    pub no_augment: bool,
    /// Also write matched renders and feature/structure masks.
    #[arg(long)]
    pub keep_intermediates: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CHANGESPLAT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}
