mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{BandwidthArg, GeometryArg, GridArg, LambdaList, MethodList};
use tomogcv::recon::Method;

#[derive(Parser)]
#[command(name = "tomogcv", version, about = "BPF tomographic reconstruction with GCV bandwidth selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a phantom and a Poisson sinogram.
    Simulate(SimulateArgs),
    /// Reconstruct an image from a sinogram.
    Reconstruct(ReconstructArgs),
    /// Select a bandwidth without writing an image.
    Tune(TuneArgs),
    /// Run the Monte-Carlo study and write per-record and summary CSVs.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug, Default)]
pub struct SimulateArgs {
    /// shepp_logan, uniform_disc[:RADIUS] or file:PATH.
    #[arg(long)]
    pub phantom: Option<String>,
    /// NX,NY in pixels.
    #[arg(long)]
    pub grid: Option<GridArg>,
    /// R,THETA or a preset (desk, full, supplement-129, supplement-160).
    #[arg(long)]
    pub geometry: Option<GeometryArg>,
    /// Total expected counts.
    #[arg(long = "counts-total", alias = "lambda")]
    pub counts_total: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct ReconstructArgs {
    /// Sinogram header or CSV.
    #[arg(long)]
    pub sinogram: Option<PathBuf>,
    /// Image grid; defaults to a square grid with one pixel per distance bin.
    #[arg(long)]
    pub grid: Option<GridArg>,
    #[arg(long)]
    pub method: Option<Method>,
    /// gcv, oracle, H or H1,H2,RHO (FWHM in pixels).
    #[arg(long)]
    pub bandwidth: Option<BandwidthArg>,
    /// Ground-truth image, required by --bandwidth oracle.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long = "floor-eps")]
    pub floor_eps: Option<f64>,
    /// Output image (.hdr or .csv); diagnostics go next to it as .json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct TuneArgs {
    #[arg(long)]
    pub sinogram: Option<PathBuf>,
    #[arg(long)]
    pub grid: Option<GridArg>,
    #[arg(long)]
    pub method: Option<Method>,
    /// Also search the oracle bandwidth against this image.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long = "floor-eps")]
    pub floor_eps: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct ExperimentArgs {
    /// Base configuration: desk (default) or full.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub phantom: Option<String>,
    #[arg(long)]
    pub grid: Option<GridArg>,
    #[arg(long)]
    pub geometry: Option<GeometryArg>,
    /// Comma-separated total counts.
    #[arg(long)]
    pub lambdas: Option<LambdaList>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated methods or "all".
    #[arg(long)]
    pub method: Option<MethodList>,
    #[arg(long = "floor-eps")]
    pub floor_eps: Option<f64>,
    /// Compare images without normalizing to unit total activity.
    #[arg(long = "raw-rmse")]
    pub raw_rmse: bool,
    /// Output directory for records.csv and summary.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Keep completed rows of an existing records.csv and run only the rest.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Tune(a) => commands::tune(a),
        Command::Experiment(a) => commands::experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
