//! Exit codes: 0 success, 1 config or usage error, 2 partial results
//! (some sweep points failed, the rest were written), 3 internal error.

use cavkin::cli::{run_experiment, validate_config, RunOptions};
use cavkin::error::CliError;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cavkin", version, about = "Cavity-modified reaction kinetics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sweep point of an experiment config and write
    /// results.csv, trace sidecars, and manifest.json.
    Run {
        /// Experiment config, JSON.
        config: PathBuf,
        /// Worker threads; defaults to the CAVKIN_WORKERS variable,
        /// then to the number of cores.
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory; overrides output.dir in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Manifest of an earlier run of the same config; finished
        /// points are reused instead of recomputed.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Resolve a config to atomic units and echo it without running.
    Validate {
        /// Experiment config, JSON.
        config: PathBuf,
    },
}

fn workers_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var("CAVKIN_WORKERS") {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::Validation(format!(
                "CAVKIN_WORKERS must be a positive integer, got {s:?}"
            ))),
        },
    }
}

fn dispatch() -> Result<(), CliError> {
    // clap's own usage errors would exit with 2, which this tool
    // reserves for partial results; remap them onto 1
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            e.print().expect("stderr");
            return Err(CliError::Validation(String::new()));
        }
        Err(e) => {
            e.print().expect("stdout");
            return Ok(());
        }
    };
    match cli.command {
        Command::Validate { config } => {
            let echo = validate_config(&config)?;
            println!("{echo}");
            Ok(())
        }
        Command::Run { config, workers, out, resume } => {
            let workers = match workers {
                Some(w) => Some(w),
                None => workers_from_env()?,
            };
            run_experiment(&config, &RunOptions { workers, out_dir: out, resume })?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
