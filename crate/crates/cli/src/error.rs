use std::io;
use std::path::Path;

use posefield::fields::FieldError;
use thiserror::Error;

/// Command failure, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or input content.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    pub fn io(path: &Path, err: io::Error) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    /// Tensor I/O failures are IO errors; anything else is malformed content.
    pub fn field(path: &Path, err: FieldError) -> Self {
        match err {
            FieldError::Io { .. } => CliError::Io(format!("{}: {err}", path.display())),
            other => CliError::Usage(format!("{}: {other}", path.display())),
        }
    }

    pub fn usage(msg: impl std::fmt::Display) -> Self {
        CliError::Usage(msg.to_string())
    }
}
