//! Command-line harness for the `entroscale` experiments.

pub mod commands;
pub mod config;
pub mod csv;
pub mod error;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::ExperimentConfig;
pub use error::{exit, CliError};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "ENTROSCALE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "entroscale", version, about = "Attention entropy experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the entropy decomposition, moments and entropy law.
    VerifyTheory(CommonArgs),
    /// Scan mean attention entropy over token counts under both policies.
    EntropyScan(CommonArgs),
    /// Train the toy denoiser and write a checkpoint.
    TrainToy(CommonArgs),
    /// Sample from a checkpoint and record attention entropy.
    SampleToy(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// key = value config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides as `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
    overrides: Vec<String>,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Config(format!(
            "{THREADS_ENV} must be a positive integer, got '{raw}'"
        ))
    })?;
    // A pool built earlier in the same process stays in place.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                exit::CONFIG
            } else {
                exit::OK
            };
        }
    };
    let (args, cmd): (&CommonArgs, fn(&ExperimentConfig) -> _) = match &cli.command {
        Command::VerifyTheory(a) => (a, commands::verify_theory),
        Command::EntropyScan(a) => (a, commands::entropy_scan),
        Command::TrainToy(a) => (a, commands::train_toy),
        Command::SampleToy(a) => (a, commands::sample_toy),
    };
    let result = configure_threads()
        .and_then(|_| ExperimentConfig::load(args.config.as_deref(), &args.overrides))
        .and_then(|cfg| cmd(&cfg));
    match result {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if outcome.passed {
                exit::OK
            } else {
                eprintln!("check failed");
                exit::CHECK_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
