use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar input fell outside its valid domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value failed validation. `field` is a dotted path
    /// into the scenario document (e.g. `users[1].theta`).
    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("user index {index} out of range for {len} users")]
    UserIndex { index: usize, len: usize },

    #[error("unknown user id {0}")]
    UnknownUser(usize),

    #[error("history too short: need at least {needed} rate vectors, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("QR iteration did not converge after {iterations} iterations")]
    EigenNonConvergence { iterations: usize },

    #[error("matrix of dimension {0} exceeds the supported size")]
    MatrixTooLarge(usize),

    #[error("empty trace")]
    EmptyTrace,

    #[error("simulation failure for user {user} at segment {segment}: {reason}")]
    Simulation {
        user: usize,
        segment: usize,
        reason: String,
    },

    #[error("malformed message: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_) | Error::Validation { .. } | Error::UserIndex { .. } | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
