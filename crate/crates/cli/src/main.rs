//! `impulse-qvi`: solve, simulate, verify, sweep and plot from a TOML config.

mod artifacts;
mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Stable exit codes.
pub mod code {
    pub const OK: u8 = 0;
    pub const INPUT: u8 = 2;
    pub const NUMERICAL: u8 = 3;
    pub const VERIFICATION: u8 = 4;
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Failure {
            code: code::INPUT,
            message: message.into(),
        }
    }
}

impl From<impulse_qvi::Error> for Failure {
    fn from(e: impulse_qvi::Error) -> Self {
        use impulse_qvi::Error::*;
        let code = match e {
            InfiniteSmallJumpMass(_)
            | InvalidInput(_)
            | Config(_)
            | EmptyPairSet
            | QuadratureTooCoarse(_)
            | DiscountTooSmall { .. }
            | StepTooLarge(_)
            | RateBelowKappa { .. }
            | EmptyXiGrid => code::INPUT,
            _ => code::NUMERICAL,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "impulse-qvi", version, about = "Impulse control QVI toolkit for 1-D jump diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML config; the reference instance when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed of every random stream.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Truncation levels, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub eps: Vec<f64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the QVI and write the value field.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Also write the assembled operator as CSV.
        #[arg(long)]
        dump_operator: bool,
    },
    /// Simulate the controlled process under the solved policy.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run numerical checks of the a-priori estimates.
    Verify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        selection: commands::Selection,
    },
    /// Solve over a list of truncation levels and tabulate convergence.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Render SVG figures from a run manifest.
    Plot {
        /// Manifest written by `solve` (or a directory containing one).
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("IMPULSE_QVI_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::input(format!("IMPULSE_QVI_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::input(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<u8, Failure> {
    configure_threads()?;
    match cli.command {
        Command::Solve { common, dump_operator } => commands::solve(&common, dump_operator),
        Command::Simulate { common } => commands::simulate(&common),
        Command::Verify { common, selection } => commands::verify(&common, &selection),
        Command::Sweep { common } => commands::sweep(&common),
        Command::Plot { manifest, out } => plot::plot(&manifest, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { code::INPUT } else { code::OK });
        }
    };
    match run(cli) {
        Ok(c) => ExitCode::from(c),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
