//! `nab`: phantoms, projection, reconstruction and evaluation from the shell.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Method;

/// Process outcome with its exit status.
#[derive(Debug)]
pub enum Failure {
    /// A check ran and did not pass (exit 1).
    Check(String),
    /// Bad arguments, configuration or input files (exit 2).
    Usage(anyhow::Error),
    /// Training hit a non-finite value (exit 3).
    Numerical(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.into())
    }
}

pub type CmdResult = Result<(), Failure>;

#[derive(Debug, Parser)]
#[command(
    name = "nab",
    version,
    about = "Sparse-view CT with neural adaptive bins"
)]
struct Cli {
    /// Worker threads for the data-parallel kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a phantom preset to `.f64r` plus a PNG preview.
    Phantom(PhantomArgs),
    /// Forward-project an image into a sinogram with a geometry sidecar.
    Project(ProjectArgs),
    /// Reconstruct an image from a sinogram.
    Reconstruct(ReconstructArgs),
    /// PSNR and SSIM of reconstructions against references.
    Eval(EvalArgs),
    /// Finite-difference and adjoint self-checks.
    Gradcheck(GradcheckArgs),
    /// Train once per steepness set and tabulate the results.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long, default_value = "hollow-square")]
    pub preset: String,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Rotation about the image center, in radians.
    #[arg(long, default_value_t = 0.3)]
    pub angle: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub views: usize,
    /// Detector count; defaults to covering the image diagonal.
    #[arg(long)]
    pub detectors: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub sino: PathBuf,
    /// Geometry sidecar; defaults to the sinogram path with a `.geom.json` extension.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// SIRT iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Comma-separated parameter groups to hold fixed.
    #[arg(long, value_delimiter = ',')]
    pub freeze: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Comma-separated steepness values cycled over the bins.
    #[arg(long, value_delimiter = ',')]
    pub steepness: Vec<f64>,
    /// Override every learning rate with one value.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Reference image; when given, metrics are written alongside the outputs.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Request bit-reproducible execution.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Reconstructions, paired in order with `--truth`.
    #[arg(long, required = true, num_args = 1..)]
    pub recon: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    pub truth: Vec<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Skew one group's analytic gradient to exercise the failure path.
    #[arg(long, hide = true)]
    pub perturb: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub sino: PathBuf,
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    #[arg(long)]
    pub truth: PathBuf,
    /// Steepness sets separated by `;`, values by `,` (e.g. `600,800;25,50,75`).
    #[arg(long)]
    pub sets: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "sweep")]
    pub out_dir: PathBuf,
}

fn run(cli: Cli) -> CmdResult {
    if let Some(n) = cli.threads {
        commands::init_threads(n)?;
    }
    match cli.command {
        Command::Phantom(a) => commands::phantom(a),
        Command::Project(a) => commands::project(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Sweep(a) => commands::sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Check(msg) => eprintln!("check failed: {msg}"),
                Failure::Usage(e) => eprintln!("error: {e:#}"),
                Failure::Numerical(e) => eprintln!("numerical abort: {e:#}"),
            }
            ExitCode::from(f.code())
        }
    }
}
