//! `duality-bench`: runs the Gibbs sampler, coordinate-ascent variational
//! inference and the duality diagnostics from a JSON configuration.
//!
//! Exit codes: 0 success, 1 a diagnostic failed, 2 configuration error,
//! 3 runtime error.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "DUALITY_BENCH_OUT";
/// Output directory when nothing else names one.
pub const DEFAULT_OUT: &str = "duality-bench-out";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<duality_core::Error> for CliError {
    fn from(e: duality_core::Error) -> Self {
        match e {
            duality_core::Error::InvalidConfig(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o: {e}"))
    }
}

/// What a successful command found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Passed,
    DiagnosticsFailed,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Passed => 0,
            Outcome::DiagnosticsFailed => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "duality-bench", version, about = "Gibbs, CAVI and duality-formula diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run Gibbs chains; write traces and pooled estimates.
    RunGibbs(CommonArgs),
    /// Run coordinate ascent; write the final mean-field state.
    RunCavi(CommonArgs),
    /// Run both engines and every diagnostic; write the report.
    Diagnose(DiagnoseArgs),
    /// Run the randomized duality-gap suite; write the gap table.
    VerifyDuality(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; defaults to $DUALITY_BENCH_OUT, then the config's
    /// `output.directory`, then ./duality-bench-out.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of Gibbs chains, seeded seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    pub parallel_chains: usize,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Diagnose this saved mean-field state instead of running CAVI.
    #[arg(long)]
    pub state: Option<PathBuf>,
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::RunGibbs(a) => commands::run_gibbs(a),
        Command::RunCavi(a) => commands::run_cavi(a),
        Command::Diagnose(a) => commands::diagnose(a),
        Command::VerifyDuality(a) => commands::verify_duality(a),
    }
}
