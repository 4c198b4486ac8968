//! Command-line front end: parse configs, drive the library, emit CSV
//! tables, raster dumps and static SVG convergence plots.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure.
//! Diagnostics go to stderr as `error: config: …` / `error: runtime: …`.

mod commands;
mod config;
mod svg;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Outputs;
use crate::config::ConfigFile;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn config(msg: String) -> CliError {
        CliError::Config(msg)
    }

    pub fn runtime(msg: String) -> CliError {
        CliError::Runtime(msg)
    }

    /// Library errors raised while interpreting user input.
    pub fn from_config_stage(e: subgrf::Error) -> CliError {
        CliError::Config(e.to_string())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "error: config: {m}"),
            CliError::Runtime(m) => write!(f, "error: runtime: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "subgrf",
    version,
    about = "Subordinated Gaussian random fields in a 2-D elliptic problem: \
             sampling, finite elements and Monte Carlo convergence studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// INI-style configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides SUBGRF_SEED and the config value.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for the Monte Carlo loop (default: available cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Replace existing output files.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Dump one Gaussian random field raster (binary + CSV).
    Field(RunArgs),
    /// Dump one draw of the two subordinator paths (CSV).
    Path(RunArgs),
    /// Dump one diffusion-coefficient raster with metadata.
    Coeff(RunArgs),
    /// One pathwise FE solve: solution raster and mesh.
    Solve(RunArgs),
    /// Full convergence experiment: per-level CSV, report JSON, config echo.
    Converge(RunArgs),
    /// Render log-log convergence SVGs from a report JSON.
    Plot {
        /// Report JSON produced by `converge`.
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        overwrite: bool,
    },
}

fn resolve_seed(flag: Option<u64>, cfg_seed: u64) -> u64 {
    if let Some(s) = flag {
        return s;
    }
    if let Ok(v) = std::env::var("SUBGRF_SEED") {
        if let Ok(s) = v.parse() {
            return s;
        }
    }
    cfg_seed
}

fn run_with(
    args: &RunArgs,
    go: impl Fn(&ConfigFile, u64, &Outputs) -> Result<(), CliError>,
) -> Result<(), CliError> {
    if let Some(n) = args.workers {
        // ignore failure when a pool already exists (tests, repeated calls)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::config(format!("cannot read `{}`: {e}", args.config.display())))?;
    let file = ConfigFile::parse(&text)?;
    let cfg_seed = file.experiment_config()?.seed;
    let seed = resolve_seed(args.seed, cfg_seed);
    let out = Outputs::new(&args.out, args.overwrite)?;
    go(&file, seed, &out)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Field(a) => run_with(a, commands::field),
        Command::Path(a) => run_with(a, commands::path),
        Command::Coeff(a) => run_with(a, commands::coeff),
        Command::Solve(a) => run_with(a, commands::solve_once),
        Command::Converge(a) => run_with(a, commands::converge),
        Command::Plot {
            report,
            out,
            overwrite,
        } => {
            let outputs = Outputs::new(out, *overwrite)?;
            commands::plot(report, &outputs)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
