//! `urnnet` command-line entry point.

// Comparisons such as `!(lo <= hi)` are written so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use args::Cli;

/// Failure of a subcommand, mapped to an exit code.
#[derive(Debug)]
pub enum CliError {
    Core(urnnet::Error),
    Io { path: String, message: String },
    Usage(String),
}

impl From<urnnet::Error> for CliError {
    fn from(e: urnnet::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), message: e.to_string() }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(urnnet::Error::UnsupportedRegime(_)) => 2,
            _ => 1,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Core(urnnet::Error::InvalidNetwork(v)) => json!({
                "error": "InvalidNetwork",
                "message": self.message(),
                "violations": v,
            }),
            CliError::Core(e) => json!({ "error": e.kind(), "message": e.to_string() }),
            CliError::Io { path, message } => json!({ "error": "Io", "path": path, "message": message }),
            CliError::Usage(m) => json!({ "error": "Usage", "message": m }),
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Core(e) => e.to_string(),
            CliError::Io { path, message } => format!("{path}: {message}"),
            CliError::Usage(m) => m.clone(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn report(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return report(&CliError::Usage(e.to_string()));
        }
    };
    match commands::run(cli, argv[1..].to_vec(), None) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
