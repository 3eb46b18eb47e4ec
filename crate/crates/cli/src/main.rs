//! `mixdrift` experiment runner.
//!
//! Every subcommand reads an optional TOML config, applies flag overrides, writes its CSVs to the
//! output directory and finishes with `manifest.json` plus the fully resolved `config.toml`.
//! Exit status: 0 success, 1 usage or configuration error, 2 runtime failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub const OUT_ENV: &str = "MIXDRIFT_OUT";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<mixdrift::Error> for CliError {
    fn from(e: mixdrift::Error) -> Self {
        match e {
            mixdrift::Error::InvalidParameter(_)
            | mixdrift::Error::UnsupportedDimension { .. }
            | mixdrift::Error::UnsupportedPotential(_)
            | mixdrift::Error::DimensionMismatch { .. } => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "mixdrift", version, about = "Mixing-drift accelerated Langevin dynamics on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: `$MIXDRIFT_OUT/<command>`, or `./<command>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    kappa: Option<f64>,
    /// Drift amplitude `A`; `bounds` also accepts `auto`.
    #[arg(long = "amplitude", short = 'A', global = true)]
    amplitude: Option<String>,
    /// Decay CSV for `bounds`.
    #[arg(long, global = true)]
    decay: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// `section.key=value` override, applied after the file (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Simulate an ensemble and write snapshots and basin occupancies.
    Sample,
    /// Correlation decay of one pair of test functions and its exponential fit.
    Mixrate,
    /// Dissipation time from the backward equation.
    Tdis,
    /// Monte-Carlo mixing time over a start set.
    Tmix,
    /// Top Lyapunov exponent of the shear schedule.
    Lyapunov,
    /// Two-point Lie-span rank at random pairs.
    Liespan,
    /// Theoretical bounds from a decay fit or explicit (D, γ).
    Bounds,
    /// Low eigenvalues of the generator.
    Spectrum,
    /// Correlations of the toral-automorphism construction.
    Discrete,
    /// Two-well distribution snapshots, stream grid and profile.
    Figure,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Sample => "sample",
            Command::Mixrate => "mixrate",
            Command::Tdis => "tdis",
            Command::Tmix => "tmix",
            Command::Lyapunov => "lyapunov",
            Command::Liespan => "liespan",
            Command::Bounds => "bounds",
            Command::Spectrum => "spectrum",
            Command::Discrete => "discrete",
            Command::Figure => "figure",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command, &cli.common) {
        Ok(dir) => {
            eprintln!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
