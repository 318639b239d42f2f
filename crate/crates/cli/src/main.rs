//! Command-line front end for the prompt-evolution engine.
//!
//! Exit codes distinguish engine health from task outcomes: 0 means the
//! engine ran cleanly (even if tasks failed), 2 means the configuration or
//! an input file was invalid, 1 means the engine itself faulted.

mod args;
mod commands;
mod config_resolve;

use clap::Parser;

use args::{Cli, Command};

/// Error carrying its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub exit_code: i32,
    pub source: anyhow::Error,
}

impl CliError {
    pub fn config(source: anyhow::Error) -> CliError {
        CliError { exit_code: 2, source }
    }

    pub fn engine(source: impl Into<anyhow::Error>) -> CliError {
        CliError {
            exit_code: 1,
            source: source.into(),
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(run) => commands::cmd_run(run),
        Command::Replay(replay) => commands::cmd_replay(replay),
        Command::Memory(memory) => commands::cmd_memory(&memory.action),
    };
    if let Err(e) = outcome {
        eprintln!("error: {:#}", e.source);
        std::process::exit(e.exit_code);
    }
}
