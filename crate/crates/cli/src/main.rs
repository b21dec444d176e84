mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "panosphere", version, about = "Panoramic route, mask and attention tools")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file (stdout for text outputs when omitted).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Where to write the run manifest; defaults to `<out>.manifest.json`.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample an exploration route over a walkable scene.
    SampleRoute(SampleRouteArgs),
    /// Build a sphere-aware attention mask for a route.
    MakeMask(MakeMaskArgs),
    /// Embed a route as a per-pixel Plücker field.
    Plucker(PluckerArgs),
    /// Run the toy attention block on seeded random tokens.
    DemoForward(DemoForwardArgs),
    /// Rotation and translation error between two routes.
    EvalPose(EvalPoseArgs),
    /// PSNR / SSIM between two images.
    EvalImage(EvalImageArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeadingMode {
    Tangent,
    Fixed,
}

#[derive(Debug, Args)]
pub struct SampleRouteArgs {
    /// Scene JSON.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, default_value_t = panosphere::route::DEFAULT_MIN_LENGTH)]
    pub min_length: f64,
    #[arg(long, default_value_t = panosphere::route::DEFAULT_STRIDE)]
    pub stride: f64,
    #[arg(long, value_enum, default_value_t = HeadingMode::Tangent)]
    pub heading: HeadingMode,
    /// Orientation used by `--heading fixed`, radians.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub yaw: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub pitch: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub roll: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_attempts: usize,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = 4)]
    pub frames: usize,
    #[arg(long, default_value_t = 12)]
    pub rows: usize,
    #[arg(long, default_value_t = 24)]
    pub cols: usize,
    /// Source ERP width.
    #[arg(long, default_value_t = 960)]
    pub width: usize,
    /// Source ERP height.
    #[arg(long, default_value_t = 480)]
    pub height: usize,
    /// Distance threshold, radians.
    #[arg(long, default_value_t = 0.35)]
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaskFormat {
    Spam,
    Json,
}

#[derive(Debug, Args)]
pub struct MakeMaskArgs {
    /// Route JSON-lines.
    #[arg(long)]
    pub route: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value_t = MaskFormat::Spam)]
    pub format: MaskFormat,
    /// Re-check the mask against the brute-force construction (N <= 512).
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CameraModel {
    Erp,
    Pinhole,
}

#[derive(Debug, Args)]
pub struct PluckerArgs {
    #[arg(long)]
    pub route: PathBuf,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
    #[arg(long, value_enum, default_value_t = CameraModel::Erp)]
    pub model: CameraModel,
    #[arg(long)]
    pub fx: Option<f64>,
    #[arg(long)]
    pub fy: Option<f64>,
    #[arg(long)]
    pub cx: Option<f64>,
    #[arg(long)]
    pub cy: Option<f64>,
    /// Add the camera position to ray directions before normalizing.
    #[arg(long)]
    pub literal_translation: bool,
}

#[derive(Debug, Args)]
pub struct DemoForwardArgs {
    /// SPAM mask over the token grid.
    #[arg(long)]
    pub mask: PathBuf,
    /// PLKF field reducible to the token grid.
    #[arg(long)]
    pub field: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 16)]
    pub d_model: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    /// Use the literal "+1" mask bias instead of hard masking.
    #[arg(long)]
    pub additive_bias: bool,
    /// Finite-difference entries checked per parameter array.
    #[arg(long, default_value_t = 4)]
    pub grad_entries: usize,
    /// Load weights (and block config) from a PWXB checkpoint.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Save the weights used to a PWXB checkpoint.
    #[arg(long)]
    pub save_weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalPoseArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub est: PathBuf,
    /// Scale both trajectories to unit length before comparing translations.
    #[arg(long)]
    pub normalize_translation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImageMetric {
    Psnr,
    Ssim,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RangeArg {
    Unit,
    Byte,
}

#[derive(Debug, Args)]
pub struct EvalImageArgs {
    /// PNG or IMGF file.
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, value_enum, default_value_t = ImageMetric::Both)]
    pub metric: ImageMetric,
    /// Value range of IMGF inputs (PNG is always 8-bit).
    #[arg(long, value_enum, default_value_t = RangeArg::Unit)]
    pub range: RangeArg,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub path: PathBuf,
}

/// Failure classes, mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Exhausted(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Exhausted(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Exhausted(m) => m,
        }
    }
}

impl From<panosphere::Error> for CliError {
    fn from(e: panosphere::Error) -> Self {
        match e {
            panosphere::Error::Exhausted { .. } => CliError::Exhausted(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn run(argv: Vec<String>, replaying: bool) -> CliResult<()> {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return if code == 0 { Ok(()) } else { Err(CliError::Usage(String::new())) };
        }
    };
    if let Command::Replay(args) = &cli.command {
        if replaying {
            return Err(CliError::Usage("a manifest cannot replay another replay".into()));
        }
        let m = RunManifest::read(&args.path)?;
        std::env::set_current_dir(&m.cwd).map_err(|e| CliError::Data(format!("{}: {e}", m.cwd.display())))?;
        return run(m.argv, true);
    }
    let params = commands::dispatch(&cli)?;
    let manifest_path = cli
        .manifest
        .clone()
        .or_else(|| cli.out.as_ref().map(|o| PathBuf::from(format!("{}.manifest.json", o.display()))));
    if let Some(path) = manifest_path {
        RunManifest::new(&cli, argv, params).write(&path)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(std::env::args().collect(), false) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !e.message().is_empty() {
                eprintln!("error: {}", e.message());
            }
            ExitCode::from(e.code())
        }
    }
}
