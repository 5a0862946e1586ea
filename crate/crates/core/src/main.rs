use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gle_krylov::pipeline::{Pipeline, RunConfig, Stage};

/// Reduce linear Langevin systems to generalized Langevin models and check them.
#[derive(Parser)]
#[command(name = "gle-krylov", version)]
struct Cli {
    /// TOML run configuration; defaults to the two-dimensional example system.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write the system matrices A and Phi.
    Generate,
    /// Moments of the memory kernel and the scalar-damping identities.
    Moments,
    /// Moment-matching (Padé) model of the configured order.
    Match,
    /// Condition numbers of the block Hankel matrices.
    CondTable,
    /// Krylov projection: projected matrices and drift.
    Reduce,
    /// Noise model and FDT consistency check (exit code 4 on failure).
    FdtCheck,
    /// Reduced and exact memory kernels on the time grid.
    Kernel,
    /// Ensemble simulation with stationary covariance estimates.
    Simulate,
    /// Velocity autocorrelation from simulation, with the exact curve.
    Vacf,
    /// Relative L2 kernel and VACF errors for orders 1 through n.
    Errors,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Self {
        match c {
            Command::Generate => Stage::Generate,
            Command::Moments => Stage::Moments,
            Command::Match => Stage::Match,
            Command::CondTable => Stage::CondTable,
            Command::Reduce => Stage::Reduce,
            Command::FdtCheck => Stage::FdtCheck,
            Command::Kernel => Stage::Kernel,
            Command::Simulate => Stage::Simulate,
            Command::Vacf => Stage::Vacf,
            Command::Errors => Stage::Errors,
        }
    }
}

fn run(cli: &Cli, stage: Stage) -> gle_krylov::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let pipeline = Pipeline::new(cfg, &cli.out)?;
    log::info!("{} with config {}", stage.name(), pipeline.config_hash());
    pipeline.run(stage)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let stage = Stage::from(cli.command);
    match run(&cli, stage) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", stage.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
