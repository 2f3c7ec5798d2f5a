use thiserror::Error;

/// Unified error type.
///
/// The three variants map onto the CLI exit-code contract: invalid
/// input/configuration → 2, numeric failure → 3, I/O → 1.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or configuration (bad ranges, malformed files,
    /// inconsistent parameters).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A numeric procedure failed (singular design matrix, degenerate
    /// counts, non-convergent fit where no iterate is usable).
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Exit code associated with this error kind (see CLI contract).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid(_) => 2,
            Error::Numeric(_) => 3,
            Error::Io(_) => 1,
        }
    }
}
