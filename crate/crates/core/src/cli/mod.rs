//! Command-line front end: `train`, `eval`, `bounds`, `psi-table` and
//! `export-features`.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure.

mod commands;
mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{bounds_report, psi_table, BoundsReport, BoundsRow, Manifest};
pub use config::{DataSource, IdxSource, RunConfig, SyntheticSource};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "asoftmax", version, about = "Angular-margin embedding training and evaluation")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print machine-readable JSON to stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Overrides the embedder seed from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an embedder and write checkpoint.sphm, loss_history.csv and manifest.json.
    Train,
    /// Evaluate a checkpoint and write report.json and features.csv.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Check the margin bound inequalities over a grid of separations.
    Bounds {
        #[arg(long, default_value_t = 10)]
        m_max: u32,
        #[arg(long, default_value_t = 10_000)]
        grid: usize,
    },
    /// Print psi(theta) and cos(theta) on an even grid over [0, pi] as CSV.
    PsiTable {
        #[arg(long)]
        m: u32,
        #[arg(long, default_value_t = 181)]
        points: usize,
    },
    /// Write the evaluation features (embedded when a checkpoint is given) to features.csv.
    ExportFeatures {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Train => commands::train(cli, out),
        Command::Eval { checkpoint } => commands::eval(cli, checkpoint, out),
        Command::Bounds { m_max, grid } => commands::bounds(cli, *m_max, *grid, out),
        Command::PsiTable { m, points } => commands::psi_table_cmd(*m, *points, out),
        Command::ExportFeatures { checkpoint } => commands::export(cli, checkpoint.as_deref(), out),
    }
}
