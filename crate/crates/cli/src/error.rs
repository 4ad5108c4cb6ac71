use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}: unknown key `{key}`")]
    UnknownKey { path: PathBuf, line: usize, key: String },

    #[error("{path}:{line}: {msg}")]
    Config { path: PathBuf, line: usize, msg: String },

    #[error("{path}: {msg}")]
    Invalid { path: PathBuf, msg: String },

    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    ChecksFailed(String),

    #[error(transparent)]
    Core(#[from] graphmae::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::ChecksFailed(_) => EXIT_CHECK_FAILED,
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            _ => EXIT_CONFIG,
        }
    }
}
