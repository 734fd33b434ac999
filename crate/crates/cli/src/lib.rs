//! Command-line front end: `certify`, `simulate` and `study` driven by one
//! TOML run configuration.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use rsem::{Error, Tolerances};

use crate::commands::Context;
use crate::config::RunConfig;

/// Exit code on success or when a certificate was found.
pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CERTIFIED: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(Error::NonFiniteState { .. }) => EXIT_DIVERGENCE,
            _ => EXIT_INPUT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ToleranceProfile {
    Default,
    Strict,
}

#[derive(Debug, Parser)]
#[command(name = "rsem", version, about = "Stability certificates and Euler-Maruyama experiments for regime-switching diffusions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "default")]
    pub tolerance_profile: ToleranceProfile,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Compute the analytic certificates and stepsize bounds.
    Certify,
    /// Simulate one trajectory of the scheme and write it as CSV.
    Simulate,
    /// Self-convergence study of the numerical invariant measures.
    Study,
}

fn fresh_seed() -> u64 {
    use std::time::{SystemTime, UNIX_EPOCH};
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos());
    (nanos as u64) ^ ((nanos >> 64) as u64) ^ u64::from(std::process::id())
}

pub fn run(cli: &Cli) -> Result<i32, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let mut config = RunConfig::load(path)?;
    let seed = match cli.seed.or(config.seed) {
        Some(s) => s,
        None => {
            let s = fresh_seed();
            eprintln!("seed: {s} (generated)");
            s
        }
    };
    config.seed = Some(seed);
    let out = cli.out.clone().unwrap_or_else(|| config.output_dir());
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let tol = match cli.tolerance_profile {
        ToleranceProfile::Default => Tolerances::default(),
        ToleranceProfile::Strict => Tolerances::strict(),
    };
    // The effective config, seed included, reproduces the run.
    report::write_file(&out.join("config.toml"), config.to_toml().as_bytes())?;
    let ctx = Context {
        config: &config,
        seed,
        out: &out,
        tol,
    };
    match cli.command {
        Command::Certify => commands::certify(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Study => commands::study(&ctx),
    }
}
