use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AsmError>;

#[derive(Debug, Error)]
pub enum AsmError {
    #[error("input shape mismatch: {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("numeric fault: {0}")]
    NumericFault(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AsmError {
    pub fn config(msg: impl Into<String>) -> Self {
        AsmError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AsmError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 3 for numeric faults, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            AsmError::NumericFault(_) => 3,
            _ => 2,
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(AsmError::Shape {
            what,
            expected,
            got,
        })
    }
}
