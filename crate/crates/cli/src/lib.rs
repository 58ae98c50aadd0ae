//! The `erda-lab` command line: gradient checks, loss landscapes and
//! training sweeps.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or configuration
//! error, 3 I/O error, 4 training diverged.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use erda_lab::DivergenceKind;

pub use error::{CliError, EXIT_CHECK_FAILED, EXIT_DIVERGED, EXIT_IO, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "erda-lab", version, about = "Pseudo-label loss laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// Random problems per (divergence, lambda) pair.
        #[arg(long, default_value_t = 500)]
        trials: usize,
        /// Maximum relative error of the loss gradients.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional CSV of the individual checks.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the binary-case update grid as CSV.
    Landscape {
        #[arg(long, default_value = "kl_pq")]
        kind: DivergenceKind,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every cell of an experiment file over its seeds.
    #[command(visible_alias = "ablate")]
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Gradcheck { trials, tol, seed, out } => commands::gradcheck(trials, tol, seed, out.as_deref()),
        Command::Landscape {
            kind,
            lambda,
            resolution,
            out,
        } => commands::landscape(kind, lambda, resolution, &out),
        Command::Train { config, out } => commands::train(&config, &out),
    }
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
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(summary) => {
            print!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
