//! `mbl`: disorder sweeps, ensemble statistics, transition-point inference
//! and frequency calibration for disordered Bose-Hubbard chains.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

/// Exit status for configuration and input errors.
pub const EXIT_CONFIG: u8 = 2;
/// Exit status for failed computations.
pub const EXIT_COMPUTE: u8 = 3;
/// Exit status for unconverged sampling or fitting.
pub const EXIT_UNCONVERGED: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "mbl", version, about = "Many-body localization transition laboratory")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run every (state, realization, h) cell of a plan and write the table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the plan's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Reduce a table to curves, distributions and the peak table.
    Analyze {
        /// Ensemble table written by `sweep`.
        table: PathBuf,
        /// Config the table must have been produced with.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Accept a table whose hash differs from the config.
        #[arg(long)]
        ignore_hash: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pool a peak table into one transition point by Gibbs sampling.
    Estimate {
        /// Peak table written by `analyze`.
        peaks: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Exit 0 even if the chains have not converged.
        #[arg(long)]
        allow_unconverged: bool,
    },
    /// Inject site offsets, simulate staircase traces and fit them back.
    Calibrate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        allow_unconverged: bool,
    },
    /// Convert between device units and units of J1.
    Units {
        #[command(subcommand)]
        conversion: commands::Conversion,
    },
}

