//! Command-line workflows over the `posefield` library: encode annotations
//! into field bundles, decode bundles into COCO results, score predictions
//! with the multi-stage loss, evaluate, benchmark upsampling and render SVG
//! overlays.
//!
//! Exit codes: 0 ok, 2 usage/config/parse, 3 IO, 4 internal invariant.

pub mod bundle;
mod commands;
pub mod config;
mod error;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use posefield::decoder::Matcher;
use posefield::losses::ScheduleKind;
use posefield::synth::Kernel;

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "posefield", version, about = "Keypoint field encoding, decoding and evaluation")]
pub struct Cli {
    /// Worker threads for per-image work (0 = one per core).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Flat TOML config; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render groundtruth field bundles from a COCO keypoint annotation file.
    Encode(EncodeArgs),
    /// Decode field bundles into COCO keypoint results.
    Decode(DecodeArgs),
    /// Score stage predictions against a groundtruth bundle.
    Loss(LossArgs),
    /// COCO-style OKS mAP of results against annotations.
    Eval(EvalArgs),
    /// Localization error of heatmap upsampling kernels.
    Bench(BenchArgs),
    /// SVG overlays of poses and field heat.
    Viz(VizArgs),
    /// Print the effective configuration.
    Config,
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let dim = |v: &str| {
        v.trim()
            .parse::<u32>()
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| format!("bad dimension {v:?} in {s:?}"))
    };
    Ok((dim(w)?, dim(h)?))
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long, value_name = "PATH")]
    pub ann: PathBuf,
    /// Override every image's size.
    #[arg(long, value_name = "WxH", value_parser = parse_size)]
    pub image_size: Option<(u32, u32)>,
    /// Downsample factor.
    #[arg(long)]
    pub fd: Option<u32>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// A bundle directory or a directory of bundles.
    #[arg(long, value_name = "DIR")]
    pub fields: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Place joints at cell centers instead of refining with offsets.
    #[arg(long)]
    pub no_offsets: bool,
    #[arg(long)]
    pub matcher: Option<Matcher>,
    #[arg(long)]
    pub bias_threshold: Option<f64>,
    #[arg(long)]
    pub peak_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    /// Prediction bundle per stage, first stage first.
    #[arg(long, value_name = "DIR", required = true, num_args = 1..)]
    pub pred: Vec<PathBuf>,
    /// Groundtruth bundle written by `encode`.
    #[arg(long, value_name = "DIR")]
    pub target: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta_schedule: Option<ScheduleKind>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// COCO keypoint annotation file.
    #[arg(long, value_name = "PATH")]
    pub gt: PathBuf,
    /// COCO keypoint results file.
    #[arg(long, value_name = "PATH")]
    pub dets: PathBuf,
    /// Full result as JSON.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Interpolated precision/recall curves as CSV.
    #[arg(long, value_name = "PATH")]
    pub pr_csv: Option<PathBuf>,
    #[arg(long)]
    pub max_dets: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Downsample factors; one row per factor and kernel.
    #[arg(long, required = true, num_args = 1..)]
    pub fd: Vec<u32>,
    #[arg(long, required = true, num_args = 1..)]
    pub kernel: Vec<Kernel>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Heatmap Gaussian width in output cells.
    #[arg(long)]
    pub sigma_cells: Option<f64>,
    /// Parabolic sub-pixel refinement of the argmax.
    #[arg(long)]
    pub subpixel: bool,
    #[arg(long)]
    pub grid_cells: Option<usize>,
    /// Also write the CSV here.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    /// COCO keypoint results file.
    #[arg(long, value_name = "PATH")]
    pub dets: PathBuf,
    /// Output directory, one SVG per image.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Annotations: image sizes and groundtruth markers.
    #[arg(long, value_name = "PATH")]
    pub gt: Option<PathBuf>,
    /// Bundles whose heatmaps are drawn underneath.
    #[arg(long, value_name = "DIR")]
    pub fields: Option<PathBuf>,
    /// Canvas size for images with no annotation or bundle.
    #[arg(long, value_name = "WxH", value_parser = parse_size)]
    pub image_size: Option<(u32, u32)>,
    /// Extra images to render even without detections.
    #[arg(long, num_args = 1..)]
    pub image_id: Vec<u64>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match commands::execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
