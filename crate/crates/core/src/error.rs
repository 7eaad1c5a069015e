use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AcitError>;

#[derive(Debug, Error)]
pub enum AcitError {
    /// Operand shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A configuration value is invalid or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition.
    #[error("contract error: {0}")]
    Contract(String),

    /// Data failed a semantic check (bbox ordering, split hygiene, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Malformed binary tensor file.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    /// Malformed text record.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// NaN or infinity where a finite value is required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AcitError {
    pub fn dim(msg: impl Into<String>) -> Self {
        AcitError::Dimension(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        AcitError::Config(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        AcitError::Contract(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AcitError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line tool.
    ///
    /// 0 success, 1 usage/config, 2 data/format, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            AcitError::Config(_) | AcitError::Usage(_) | AcitError::Contract(_) => 1,
            AcitError::Dimension(_)
            | AcitError::Validation(_)
            | AcitError::Format { .. }
            | AcitError::Parse { .. }
            | AcitError::Io { .. } => 2,
            AcitError::Numeric(_) => 3,
        }
    }
}
