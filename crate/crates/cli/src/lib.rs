//! The `dalign` command line: training, evaluation, caption statistics,
//! synthetic data and visualizations, each run recorded in a manifest.

pub mod args;
pub mod commands;
pub mod manifest;

use std::fmt;

pub use args::{Cli, Command};

/// Exit status classes of the tool.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Internal = 1,
    Input = 2,
    Numerical = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: ExitCode::Input,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            code: ExitCode::Internal,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<dalign::Error> for CliError {
    fn from(e: dalign::Error) -> Self {
        use dalign::Error as E;
        let code = match &e {
            E::NonFinite(_) => ExitCode::Numerical,
            E::Contract(_) | E::Index { .. } => ExitCode::Internal,
            _ => ExitCode::Input,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Runs one subcommand; its JSON result is printed to stdout.
pub fn run(command: &Command) -> CliResult<()> {
    let value = match command {
        Command::Train(a) => commands::train::run(command, a)?,
        Command::Eval(a) => commands::eval::run(command, a)?,
        Command::Stats(a) => commands::stats::run(command, a)?,
        Command::Synth(a) => commands::data::synth(command, a)?,
        Command::Degrade(a) => commands::data::degrade(command, a)?,
        Command::Heatmap(a) => commands::visual::heatmap(command, a)?,
        Command::Pca(a) => commands::visual::pca(command, a)?,
        Command::Replay(a) => return commands::replay(a),
    };
    if let Some(v) = value {
        println!("{}", serde_json::to_string(&v).map_err(|e| CliError::internal(e.to_string()))?);
    }
    Ok(())
}

/// Sizes the global worker pool from `DALIGN_THREADS`, if set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("DALIGN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::input(format!("DALIGN_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::internal(e.to_string()))
}
