use std::path::{Path, PathBuf};

use rdl_core::ErrorKind;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Numeric(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Io { .. } => 3,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Wraps a library error with the config key or input it came from.
    pub fn at(context: &str, err: rdl_core::Error) -> Self {
        let msg = if context.is_empty() {
            err.to_string()
        } else {
            format!("{context}: {err}")
        };
        match err.kind() {
            ErrorKind::Validation => CliError::Validation(msg),
            ErrorKind::Numeric => CliError::Numeric(msg),
        }
    }
}

impl From<rdl_core::Error> for CliError {
    fn from(err: rdl_core::Error) -> Self {
        CliError::at("", err)
    }
}
