//! `draec`: scene simulation, processing, evaluation and experiment sweeps.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
//! Errors are reported on stderr as a single line `error: <kind>: <message>`.

mod evaluate;
mod experiment;
mod grid;
mod process;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::grid::GridArgs;

/// Environment variable holding the worker thread count.
pub const WORKERS_ENV: &str = "DRAEC_WORKERS";

#[derive(Parser)]
#[command(
    name = "draec",
    version,
    about = "Joint echo cancellation and dereverberation with per-bin Kalman filters",
    after_help = "Environment:\n  DRAEC_WORKERS  worker threads for bins and experiment cells (default: all cores)\n\nExit codes: 0 ok, 1 usage, 2 runtime."
)]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// Run configuration file (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set filter.alpha=0.9`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes and a manifest.
    Simulate {
        #[command(flatten)]
        grid: GridArgs,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Run one or more variants on a scene directory or a WAV pair.
    Process(process::ProcessArgs),
    /// Compute metrics for processed runs.
    Evaluate(evaluate::EvaluateArgs),
    /// Run a full grid of scenes and variants and aggregate the results.
    Experiment {
        #[command(flatten)]
        grid: GridArgs,
        /// Skip the echo-path-change tracking run.
        #[arg(long)]
        no_tracking: bool,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

/// A failure with its exit class.
#[derive(Debug)]
pub enum CliError {
    Usage { kind: String, message: String },
    Runtime { kind: String, message: String },
}

impl CliError {
    pub fn usage(kind: &str, message: impl Into<String>) -> Self {
        CliError::Usage {
            kind: kind.into(),
            message: message.into(),
        }
    }

    pub fn runtime(kind: &str, message: impl Into<String>) -> Self {
        CliError::Runtime {
            kind: kind.into(),
            message: message.into(),
        }
    }

    /// Configuration problems count as usage errors.
    pub fn config(e: draec::Error) -> Self {
        CliError::usage(e.kind(), e.to_string())
    }

    fn report(&self) -> (String, u8) {
        let (kind, message, code) = match self {
            CliError::Usage { kind, message } => (kind, message, 1),
            CliError::Runtime { kind, message } => (kind, message, 2),
        };
        let flat: Vec<&str> = message.split_whitespace().collect();
        (format!("error: {kind}: {}", flat.join(" ")), code)
    }
}

impl From<draec::Error> for CliError {
    fn from(e: draec::Error) -> Self {
        match e {
            draec::Error::InvalidConfig { .. } => CliError::config(e),
            _ => CliError::runtime(e.kind(), e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn io_error(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::runtime("io", format!("{}: {e}", path.display()))
}

fn init_workers() -> CliResult<()> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n >= 1).ok_or_else(|| {
        CliError::usage(
            "usage",
            format!("{WORKERS_ENV} must be a positive integer, got {raw:?}"),
        )
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::runtime("workers", e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    init_workers()?;
    match cli.command {
        Command::Simulate { grid, out } => simulate::run(&cli.config, &grid, &out),
        Command::Process(args) => process::run(&cli.config, &args),
        Command::Evaluate(args) => evaluate::run(&cli.config, &args),
        Command::Experiment {
            grid,
            no_tracking,
            out,
        } => experiment::run(&cli.config, &grid, no_tracking, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                "missing subcommand, see `draec --help`".to_string()
            } else {
                let text = e.render().to_string();
                let first = text.lines().next().unwrap_or("invalid arguments");
                first.trim_start_matches("error:").trim().to_string()
            };
            eprintln!("{}", CliError::usage("usage", msg).report().0);
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (line, code) = e.report();
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
