//! Command-line front end for spherical needlet analysis.
//!
//! Exit codes: 0 ok, 2 configuration error, 3 numeric or model-assumption
//! failure, 4 resource limit.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use needlets::Error;

use config::CampaignConfig;

#[derive(Parser)]
#[command(
    name = "needlets",
    version,
    about = "Spherical needlet analysis of isotropic Gaussian random fields"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Flat key-value configuration file (angles in radians).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Worker thread count; results are identical for any value.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the window profile and per-scale spectral weight tables.
    Filter(RunArgs),
    /// Simulate one Gaussian field realization and write samples plus
    /// harmonic coefficients.
    Simulate(RunArgs),
    /// Needlet-transform a simulated field at the configured scales.
    Transform(RunArgs),
    /// Correlation diagnostics: per-scale decay tables and cross-scale
    /// decorrelation measurements.
    Corr(RunArgs),
    /// Goodness-of-fit pipeline: statistics, standardization, partial-sum
    /// test, and optional size calibration.
    Gof(RunArgs),
    /// Masked-sky experiment: discrepancy map and robustness summary.
    Mask(RunArgs),
}

fn run(
    args: &RunArgs,
    f: impl Fn(&CampaignConfig, &std::path::Path) -> needlets::Result<()>,
) -> needlets::Result<()> {
    let cfg = CampaignConfig::parse_file(&args.config)?;
    let workers = args.workers.or(cfg.workers);
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::invalid("workers must be positive"));
        }
        // ignore failure if a pool is already installed (tests call run twice)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    std::fs::create_dir_all(&args.out)?;
    f(&cfg, &args.out)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) | Error::Precondition(_) | Error::Parse(_) => 2,
        Error::DegenerateSpectrum(_) | Error::SingularCovariance(_) | Error::Inconsistent(_) => 3,
        Error::ResourceLimit(_) => 4,
        Error::Io(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Filter(a) => run(a, commands::cmd_filter),
        Command::Simulate(a) => run(a, commands::cmd_simulate),
        Command::Transform(a) => run(a, commands::cmd_transform),
        Command::Corr(a) => run(a, commands::cmd_corr),
        Command::Gof(a) => run(a, commands::cmd_gof),
        Command::Mask(a) => run(a, commands::cmd_mask),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
