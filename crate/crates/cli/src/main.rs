//! `unmix`: synthesize scenes, run the unmixing solvers and score results.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use unmix_core::UnmixError;

use config::{Overrides, RunConfig, SolverKind};

#[derive(Parser)]
#[command(name = "unmix", version, about = "Blind hyperspectral unmixing")]
struct Cli {
    /// Progress messages on stderr.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated noise levels in dB (`inf` for clean).
    #[arg(long, value_delimiter = ',')]
    snr: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scene, its ground truth and noisy variants.
    Synth(RunArgs),
    /// Initialize and run the configured solver.
    Unmix {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        solver: Option<SolverKind>,
    },
    /// Score an estimate against ground truth, or merge reports with --table.
    Eval {
        #[arg(long, required_unless_present = "table")]
        est: Option<PathBuf>,
        #[arg(long, required_unless_present = "table")]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        label: Option<String>,
        /// Report CSVs to merge into one grid per metric.
        #[arg(long, num_args = 1.., conflicts_with_all = ["est", "truth"])]
        table: Option<Vec<PathBuf>>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Numeric(_) => 3,
            Self::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Numeric(m) => write!(f, "numeric failure: {m}"),
            Self::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<UnmixError> for CliError {
    fn from(e: UnmixError) -> Self {
        let msg = e.to_string();
        match e {
            UnmixError::Diverged { .. } | UnmixError::Singular(_) => Self::Numeric(msg),
            UnmixError::Io { .. } | UnmixError::Format { .. } | UnmixError::SizeMismatch { .. } => {
                Self::Io(msg)
            }
            _ => Self::Usage(msg),
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("UNMIX_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!(
            "UNMIX_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn load(args: &RunArgs, solver: Option<SolverKind>) -> Result<RunConfig, CliError> {
    RunConfig::load(&args.config)?.resolve(&Overrides {
        out: args.out.clone(),
        seed: args.seed,
        snr: args.snr.clone(),
        solver,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Synth(args) => commands::synth(&load(&args, None)?, cli.verbose),
        Command::Unmix { run, solver } => commands::unmix(&load(&run, solver)?, cli.verbose),
        Command::Eval {
            est,
            truth,
            out,
            label,
            table,
        } => match table {
            Some(reports) => commands::table(&reports, &out),
            None => commands::eval(
                &est.expect("required by clap"),
                &truth.expect("required by clap"),
                &out,
                label,
                cli.verbose,
            ),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("unmix: {e}");
            ExitCode::from(e.code())
        }
    }
}
