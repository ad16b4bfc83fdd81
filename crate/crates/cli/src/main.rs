mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "spectraforge", version, about = "Active-illumination multispectral pipeline")]
struct Cli {
    /// Worker threads for parallel kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dark-field subtraction, flat fielding and lens undistortion.
    Calibrate(CalibrateArgs),
    /// Otsu LED-spot masks and cross-band inpainting.
    Mask(MaskArgs),
    /// Locate our-camera frame inside a reference cube and cut the training pair.
    Align(AlignArgs),
    /// Project a reference cube onto the LED bands.
    Project(ProjectArgs),
    /// Emit randomly augmented copies of a registered pair.
    Augment(AugmentArgs),
    /// Generate synthetic training pairs and a dataset manifest.
    Synth(SynthArgs),
    /// Run one training stage.
    Train(TrainArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Print a cube header.
    Info(InfoArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long)]
    pub white: PathBuf,
    #[arg(long)]
    pub dark: Option<PathBuf>,
    /// Corner file: `obs_x obs_y board_i board_j` per line.
    #[arg(long)]
    pub corners: PathBuf,
    /// Board spacing in output pixels; omit to keep the camera frame.
    #[arg(long)]
    pub pitch: Option<f64>,
    /// Flat-field guard below which white pixels are invalid.
    #[arg(long, default_value_t = spectraforge_core::calibration::DEFAULT_FLAT_EPSILON)]
    pub epsilon: f32,
    #[arg(long)]
    pub out: PathBuf,
    /// Spatial validity PNG (valid where every band is valid).
    #[arg(long)]
    pub mask_out: PathBuf,
    /// Optional JSON report of the distortion fit.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Directory receiving one PNG per band.
    #[arg(long)]
    pub mask_out: PathBuf,
    #[arg(long)]
    pub inpaint_out: PathBuf,
    #[arg(long, default_value_t = spectraforge_core::spotmask::DEFAULT_SPOT_RATIO)]
    pub spot_ratio: f64,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub ours: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Our pixels per reference pixel.
    #[arg(long)]
    pub factor: f64,
    /// Wavelength of the matching band.
    #[arg(long, default_value_t = spectraforge_core::registration::DEFAULT_MATCH_NM)]
    pub match_nm: f64,
    /// Sum NCC over every band instead of one.
    #[arg(long)]
    pub multi_band: bool,
    #[arg(long)]
    pub out_pair: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub gt: PathBuf,
    /// LED table (`name peak_nm half_width_nm`); default is the built-in table.
    #[arg(long)]
    pub leds: Option<PathBuf>,
    /// Pick the nearest band per LED instead of Gaussian weighting.
    #[arg(long)]
    pub nearest: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub count: usize,
    /// JSON file overriding the affine parameter ranges.
    #[arg(long)]
    pub ranges: Option<PathBuf>,
    /// Leave the ground truth unwarped.
    #[arg(long)]
    pub no_warp_gt: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON synthetic-data config; default is the 64×64×8 → 16×16×32 preset.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub seed: u64,
    /// Held-out samples; default keeps the 10-of-95 share.
    #[arg(long)]
    pub test_count: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 1024×1024×8 → 286×286×299.
    Full,
    /// 64×64×8 → 16×16×32.
    Tiny,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON training config; default is the stage defaults for `--preset`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    pub preset: Preset,
    #[arg(long)]
    pub stage: String,
    #[arg(long)]
    pub seed: u64,
    /// Continue from a checkpoint of this stage.
    #[arg(long, conflicts_with = "init")]
    pub resume: Option<PathBuf>,
    /// Start from the weights of a checkpoint (e.g. the pretrain result).
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub validation_count: Option<usize>,
    /// Penalize neighbor differences of the residual instead of the prediction.
    #[arg(long)]
    pub delta_vs_gt: bool,
    /// Inpaint LED spots in raw-camera items.
    #[arg(long)]
    pub inpaint_raw: bool,
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, requires = "pred", conflicts_with_all = ["manifest", "checkpoint"])]
    pub gt: Option<PathBuf>,
    #[arg(long, requires = "gt")]
    pub pred: Option<PathBuf>,
    /// Root segmentation PNG at ground-truth resolution.
    #[arg(long, requires = "gt")]
    pub seg: Option<PathBuf>,
    /// Evaluate a checkpoint on the manifest's test split.
    #[arg(long, requires = "checkpoint")]
    pub manifest: Option<PathBuf>,
    #[arg(long, requires = "manifest")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    pub cube: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPECTRAFORGE_LOG", "warn")).init();
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
    let result = match cli.command {
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Mask(a) => commands::mask(a),
        Command::Align(a) => commands::align(a),
        Command::Project(a) => commands::project(a),
        Command::Augment(a) => commands::augment(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Info(a) => commands::info(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
