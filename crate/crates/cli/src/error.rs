use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing file: {}", path.display())]
    Missing { path: PathBuf },

    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("numerical failure: {context}")]
    Numerical { context: String },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn config(field: &str, reason: impl Into<String>) -> Self {
        CliError::Config {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::Missing {
                path: path.to_path_buf(),
            }
        } else {
            CliError::Other(format!("{}: {e}", path.display()))
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Missing { .. } => 2,
            CliError::Config { .. } => 3,
            CliError::Numerical { .. } => 4,
            CliError::Schema(_) => 5,
            CliError::Other(_) => 1,
        }
    }

    /// Prefixes numerical failures with where they happened.
    pub fn context(self, what: impl std::fmt::Display) -> Self {
        match self {
            CliError::Numerical { context } => CliError::Numerical {
                context: format!("{what}: {context}"),
            },
            other => other,
        }
    }
}

impl From<ttga_core::Error> for CliError {
    fn from(e: ttga_core::Error) -> Self {
        use ttga_core::Error as E;
        match e {
            E::Config { field, reason } => CliError::Config { field, reason },
            E::NonFinite { step } => CliError::Numerical {
                context: format!("non-finite latent at step {step}"),
            },
            E::Degenerate(r) => CliError::Numerical { context: r },
            E::Io(io) => CliError::Other(io.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(e.to_string())
    }
}
