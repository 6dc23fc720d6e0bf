use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure category, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numeric,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("probability {0} lies outside [0, 1]")]
    ProbabilityOutOfRange(f64),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("sequence of length {len} exceeds the exact enumeration cap of {cap}")]
    EnumerationCap { len: usize, cap: usize },

    #[error("event dated {date} falls after the assessment date {as_of}")]
    EventAfterAsOf { date: String, as_of: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("score table rejected: {}", .0.join("; "))]
    InvalidTable(Vec<String>),

    #[error("record rejected: {0}")]
    InvalidRecord(String),

    #[error("design has {rows} rows but {cols} columns")]
    Underdetermined { rows: usize, cols: usize },

    #[error("design matrix is rank deficient; offending columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::RankDeficient { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
