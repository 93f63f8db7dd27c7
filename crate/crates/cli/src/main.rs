//! `spts` command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 runtime or
//! numeric failure.

mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] spts_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("cannot serialise output: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if !e.is_validation() => 3,
            CliError::Json(_) => 3,
            _ => 2,
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenModel(a) => commands::gen_model(a),
        Command::GenTokens(a) => commands::gen_tokens(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Run(a) => commands::run(a),
        Command::Bench(a) => commands::bench(a),
        Command::Diag(a) => commands::diag(a),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
