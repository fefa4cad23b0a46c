mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use railchoice::Error;

#[derive(Debug, Parser)]
#[command(name = "railchoice", version, about = "Path choice estimation from tap-in/tap-out and train movement data")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the simulation seed and the seed of the random starts.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (all cores when absent).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic network, timetable and tap records.
    Simulate(SimulateArgs),
    /// Fit left-behind probabilities from single-line journey times.
    CalibrateLb(CalibrateArgs),
    /// Estimate the choice model.
    Estimate(EstimateArgs),
    /// Re-estimate under perturbed walking speed and crowding inputs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub passengers: Option<usize>,
    /// Trips per passenger.
    #[arg(long)]
    pub trips: Option<u32>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input directory (defaults to --out).
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Smallest cell that is fitted.
    #[arg(long)]
    pub min_sample: Option<usize>,
    /// Largest left-behind count.
    #[arg(long)]
    pub max_left_behind: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Latent,
    Baseline,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Left-behind profile (defaults to left_behind.csv in the data directory).
    #[arg(long)]
    pub left_behind: Option<PathBuf>,
    /// Number of random starting points.
    #[arg(long)]
    pub starts: Option<usize>,
    /// Seed of the random starting points.
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// Recompute tap-out densities instead of using the cache.
    #[arg(long)]
    pub no_cache: bool,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, value_enum, default_value = "latent")]
    pub model: ModelChoice,
    /// Generating parameter values (defaults to truth.json in the data directory when present).
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepChoice {
    Speed,
    Crowding,
    All,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, value_enum, default_value = "all")]
    pub sweep: SweepChoice,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 4,
        Error::Convergence { .. } | Error::MixtureConvergence(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
