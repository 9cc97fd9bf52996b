//! `qsmooth` command-line driver.
//!
//! ```text
//! qsmooth simulate --config cfg.json --out DIR [--seed N] [--threads N]
//! qsmooth smooth   --config cfg.json --out DIR [--records PATH]
//! qsmooth oracle   --config cfg.json --out DIR --n-steps N
//! qsmooth compare  --config cfg.json --out DIR --dts 0.01,0.001 [--n-steps N]
//! ```
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid input, 3 QND condition
//! violated, 4 oracle dimension cap exceeded.

pub mod commands;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{run, RunSummary};
pub use error::CliError;

/// Environment variable overriding the oracle's joint-dimension cap.
pub const MAX_JOINT_DIM_ENV: &str = "QSMOOTH_MAX_JOINT_DIM";

#[derive(Debug, Parser)]
#[command(name = "qsmooth", version, about = "Quantum filtering and smoothing of homodyne records")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Overrides `experiment.seed`.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads for trajectory-level parallelism.
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate records and write filtered trajectories.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Filter and smooth simulated or existing records.
    Smooth {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSV, or a directory of `traj_*.csv`, to smooth instead of simulating.
        #[arg(long, value_name = "PATH")]
        records: Option<PathBuf>,
    },
    /// Exhaustive discrete reference with its checks.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "N")]
        n_steps: usize,
    },
    /// Convergence of the filter and smoother to the discrete reference.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated step sizes.
        #[arg(long, value_name = "CSV", value_delimiter = ',', required = true)]
        dts: Vec<f64>,
        #[arg(long, value_name = "N", default_value_t = 8)]
        n_steps: usize,
    },
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Simulate { common }
            | Command::Smooth { common, .. }
            | Command::Oracle { common, .. }
            | Command::Compare { common, .. } => common,
        }
    }
}
