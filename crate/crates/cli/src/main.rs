mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use dsel::DselError;
use thiserror::Error;

use crate::config::PipelineConfig;

/// Malformed or missing user input.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct InputError(pub String);

/// A pipeline preset missed one of its acceptance margins.
#[derive(Debug, Error)]
#[error("acceptance margins failed: {0}")]
pub struct MarginFailure(pub String);

#[derive(Debug, Parser)]
#[command(name = "dsel", version, about = "Labeled-data selection and weighted category discovery")]
struct Cli {
    /// JSON config; command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Weight labeled categories against an unlabeled set.
    Select(commands::SelectArgs),
    /// Train the discovery model and assign labels.
    Discover(commands::DiscoverArgs),
    /// Score predicted labels against ground truth.
    Evaluate(commands::EvaluateArgs),
    /// Generate a synthetic scene.
    Synth(commands::SynthArgs),
    /// Run a benchmark preset end to end.
    Pipeline(commands::PipelineArgs),
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("DSEL_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| InputError(format!("DSEL_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let cfg = PipelineConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Select(a) => commands::select(a, &cfg),
        Command::Discover(a) => commands::discover(a, &cfg),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Synth(a) => commands::synth(a, &cfg),
        Command::Pipeline(a) => commands::pipeline(a, &cfg),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<MarginFailure>() {
            return 3;
        }
        if cause.is::<InputError>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<DselError>() {
            return if e.is_input_error() { 2 } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
