//! Command-line front end: configuration, CSV artifacts, optional PNG
//! rendering and the four subcommands.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

pub mod commands;
pub mod config;
pub mod output;
#[cfg(feature = "png")]
pub mod render;

pub use commands::{execute, identify_report};
pub use config::{parse_config, Command, RunConfig};

/// Environment variable capping the worker threads of grid runs.
pub const THREADS_ENV: &str = "ACTIVESET_ID_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Clap(clap::Error),
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid value for `{key}`: `{value}`")]
    Value { key: String, value: String },
    #[error("`{key}` out of range: {message}")]
    Range { key: String, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("CSV row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("CSV is missing column `{0}`")]
    MissingColumn(String),
    #[error(transparent)]
    Experiment(#[from] activeset_core::experiments::ExperimentError),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("{0} verification properties failed")]
    VerifyFailed(usize),
}

impl CliError {
    /// 0 success, 1 usage error, 2 solver or verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Clap(e) if !e.use_stderr() => 0,
            CliError::Clap(_)
            | CliError::Usage(_)
            | CliError::Value { .. }
            | CliError::Range { .. } => 1,
            _ => 2,
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Value {
            key: THREADS_ENV.into(),
            value: raw.clone(),
        })?;
    // A pool that already exists (tests calling `run` twice) is kept.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Parses arguments, runs the subcommand and returns the exit code.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let result = configure_threads()
        .and_then(|()| parse_config(args, None))
        .and_then(|cfg| execute(&cfg, stdout));
    match result {
        Ok(()) => 0,
        Err(CliError::Clap(e)) if !e.use_stderr() => {
            let _ = write!(stdout, "{e}");
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "activeset-id: {e}");
            e.exit_code()
        }
    }
}
