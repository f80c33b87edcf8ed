//! Command-line runner: config files in, reproducible experiment outputs out.

pub mod analyze;
pub mod config;
pub mod run;
pub mod tune;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("missing snapshots: {0}")]
    MissingSnapshots(String),
    #[error("self-test failed: {0}")]
    SelfTest(String),
    #[error(transparent)]
    Runtime(#[from] somnus::Error),
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
}

impl CliError {
    /// 2 for problems with the inputs, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Data(_) | CliError::MissingSnapshots(_) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |e| CliError::Io(path, e)
}

#[derive(Debug, Parser)]
#[command(
    name = "somnus",
    version,
    about = "Equilibrium-propagation networks with sleep replay consolidation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every configured strategy and write metrics, confusions and snapshots.
    Run {
        config: PathBuf,
        /// Hidden size 256 and 20% of the data.
        #[arg(long)]
        fast: bool,
    },
    /// Search sleep parameters with the genetic algorithm.
    Tune {
        /// Required unless `--selftest-ga` is given.
        config: Option<PathBuf>,
        #[arg(long)]
        fast: bool,
        /// Run the GA on the sphere objective instead.
        #[arg(long)]
        selftest_ga: bool,
        /// Replace the fitness with a constant (checks termination).
        #[arg(long, hide = true)]
        flat_fitness: bool,
    },
    /// Compute weight diffs, hidden correlations and importance cosines from a run directory.
    Analyze {
        run_dir: PathBuf,
        /// Phase pairs such as `T5:S5`; defaults to every T#:S# pair.
        #[arg(long = "pair")]
        pairs: Vec<String>,
        /// Task order whose snapshots are analysed.
        #[arg(long, default_value_t = 0)]
        order: usize,
        #[arg(long, default_value_t = 50)]
        bins: usize,
    },
    /// Quick checks of the core routines on synthetic inputs.
    Selftest,
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run { config, fast } => run::cmd_run(&config, fast),
        Command::Tune {
            config,
            fast,
            selftest_ga,
            flat_fitness,
        } => tune::cmd_tune(config.as_deref(), fast, selftest_ga, flat_fitness),
        Command::Analyze {
            run_dir,
            pairs,
            order,
            bins,
        } => analyze::cmd_analyze(&run_dir, &pairs, order, bins),
        Command::Selftest => tune::cmd_selftest(),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
