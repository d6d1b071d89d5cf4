//! Error classes and their exit codes.

use pamkit_core::PamError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    HeavyTail(String),
    #[error("{0}")]
    Io(String),
}

/// Machine-readable error record printed on stderr.
#[derive(Debug, Serialize)]
pub struct ErrorRecord<'a> {
    pub class: &'a str,
    pub exit_code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::HeavyTail(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
            CliError::HeavyTail(_) => "heavy_tail",
            CliError::Io(_) => "io",
        }
    }

    pub fn record(&self) -> ErrorRecord<'_> {
        ErrorRecord {
            class: self.class(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        }
    }
}

impl From<PamError> for CliError {
    fn from(e: PamError) -> Self {
        let msg = e.to_string();
        match e {
            PamError::Config(_) | PamError::Domain(_) => CliError::Config(msg),
            PamError::Numerical { .. } => CliError::Numerical(msg),
            PamError::HeavyTail { .. } => CliError::HeavyTail(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
