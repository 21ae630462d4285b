//! Command-line front end. Subcommands map one-to-one onto the library
//! pipelines: synthesize a dataset, transfer beliefs between views, sweep
//! occupancy bounds, train the per-pixel model, score checkpoints.
//!
//! Exit codes: 0 success, 2 bad configuration or arguments, 3 numeric or
//! geometric failure, 4 I/O or file-format failure.

mod commands;
mod dataset;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::CmdError;
use crossview_core::error::Error;

#[derive(Parser)]
#[command(name = "crossview", version, about = "Multiview cross-supervision toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a calibrated multi-camera dataset under an output directory.
    GenScene(GenSceneArgs),
    /// Pool source-view beliefs into a target view along epipolar rows.
    Transfer(TransferArgs),
    /// Sweep occupancy bounds over a growing set of labeled views.
    Bounds(BoundsArgs),
    /// Train the per-pixel segmentation model.
    Train(TrainArgs),
    /// Score one or more checkpoints against ground truth.
    Eval(EvalArgs),
}

#[derive(clap::Args)]
pub struct GenSceneArgs {
    /// Directory the dataset is written into.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for the label split and image noise.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Seed controlling scene layout.
    #[arg(long, default_value_t = 5)]
    pub scene_seed: u64,
    /// Number of cameras in the rig.
    #[arg(long, default_value_t = 16)]
    pub cameras: usize,
    /// Rig radius (distance of every camera from the origin).
    #[arg(long, default_value_t = 10.0)]
    pub radius: f64,
    /// Camera arrangement.
    #[arg(long, value_enum, default_value_t = RigArg::Ring)]
    pub rig: RigArg,
    /// Side length of the cropped working resolution.
    #[arg(long, default_value_t = 32)]
    pub heatmap: usize,
    /// Fraction of views that receive ground-truth labels.
    #[arg(long, default_value_t = 0.25)]
    pub eta: f64,
    /// Image noise level in [0, 1].
    #[arg(long, default_value_t = 0.04)]
    pub noise: f64,
    /// Explicit labeled view indices (overrides --eta and --seed for the split).
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<usize>>,
}

#[derive(Copy, Clone, ValueEnum)]
pub enum RigArg {
    Ring,
    Dome,
    TwoLayer,
}

#[derive(clap::Args)]
pub struct TransferArgs {
    /// Dataset directory written by gen-scene.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory results are written into.
    #[arg(long)]
    pub out: PathBuf,
    /// Target view index.
    #[arg(long)]
    pub target: usize,
    /// Source view indices (default: every view except the target).
    #[arg(long, value_delimiter = ',')]
    pub sources: Option<Vec<usize>>,
    /// Box-blur passes applied to the source silhouettes first.
    #[arg(long, default_value_t = 3)]
    pub blur: usize,
    /// Cross-check the result against a direct per-pixel ray sweep.
    #[arg(long)]
    pub verify: bool,
    /// Pixels sampled by --verify.
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
    /// Depth samples per ray in the --verify sweep.
    #[arg(long, default_value_t = 4096)]
    pub verify_depths: usize,
    /// Largest allowed disagreement before --verify fails the run.
    #[arg(long, default_value_t = 0.05)]
    pub tolerance: f64,
    /// Seed for the --verify pixel sample.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(clap::Args)]
pub struct BoundsArgs {
    /// Dataset directory written by gen-scene.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory results are written into.
    #[arg(long)]
    pub out: PathBuf,
    /// View the bounds are computed for (default: the last view).
    #[arg(long)]
    pub target: Option<usize>,
    /// Labeled-view counts to sweep.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    pub counts: Vec<usize>,
    /// Voxel grid resolution per axis for the lower bound.
    #[arg(long, default_value_t = 96)]
    pub grid: usize,
    /// Box-blur passes applied to the upper-bound beliefs (0 keeps them binary).
    #[arg(long, default_value_t = 0)]
    pub blur: usize,
}

#[derive(clap::Args)]
pub struct TrainArgs {
    /// Dataset directory written by gen-scene.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory the checkpoint and metrics are written into.
    #[arg(long)]
    pub out: PathBuf,
    /// Training regime (sets the loss weights unless overridden).
    #[arg(long, value_enum, default_value_t = Regime::Cross)]
    pub regime: Regime,
    /// Override the transfer-consistency weight.
    #[arg(long)]
    pub lambda_s: Option<f64>,
    /// Override the pseudo-label weight.
    #[arg(long)]
    pub lambda_p: Option<f64>,
    /// Total optimization steps.
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    /// Supervised-only steps before the augmented losses switch on.
    #[arg(long, default_value_t = 500)]
    pub warmup: usize,
    /// Learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Seed for initialization and triplet sampling.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Steps between metric evaluations.
    #[arg(long, default_value_t = 250)]
    pub eval_every: usize,
    /// Supervised steps interleaved per augmented step.
    #[arg(long, default_value_t = 1)]
    pub interleave: usize,
    /// Depth samples per epipolar row scan.
    #[arg(long, default_value_t = 256)]
    pub depths: usize,
    /// Dump unlabeled-view predictions every this many steps (0 disables).
    #[arg(long, default_value_t = 0)]
    pub snapshot_every: usize,
    /// Resume from an existing checkpoint instead of initializing fresh.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum Regime {
    NoAug,
    Prior,
    Cross,
}

#[derive(clap::Args)]
pub struct EvalArgs {
    /// Dataset directory written by gen-scene.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory the reports are written into.
    #[arg(long)]
    pub out: PathBuf,
    /// Which views to score.
    #[arg(long, value_enum, default_value_t = EvalViews::Unlabeled)]
    pub views: EvalViews,
    /// Checkpoint files to compare.
    #[arg(required = true)]
    pub checkpoints: Vec<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum)]
pub enum EvalViews {
    Unlabeled,
    Labeled,
    All,
}

/// 2 for configuration mistakes, 3 for numeric or geometric failures,
/// 4 for anything that touches the filesystem or a file format.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Format { .. } | Error::BadCheckpoint(_) => 4,
        Error::DegenerateRectification
        | Error::SingularHomography(_)
        | Error::CoincidentCenters
        | Error::BehindCamera(_)
        | Error::NonFinite { .. }
        | Error::UnorderedBounds { .. }
        | Error::BadRotation(_)
        | Error::BadIntrinsics
        | Error::BadDirection(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenScene(args) => commands::gen_scene(args),
        Command::Transfer(args) => commands::transfer(args),
        Command::Bounds(args) => commands::bounds(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Core(err)) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
        Err(CmdError::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
