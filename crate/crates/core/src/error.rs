use thiserror::Error;

/// Errors raised by estimation, simulation and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value at unit {unit}, period {period} ({series})")]
    NonFinite {
        unit: usize,
        period: usize,
        series: String,
    },

    #[error("{what} is numerically singular (smallest eigenvalue {min_eigenvalue:e})")]
    Singular {
        what: &'static str,
        min_eigenvalue: f64,
    },

    #[error("{what} is rank deficient (rank {rank}, expected {expected})")]
    RankDeficient {
        what: &'static str,
        rank: usize,
        expected: usize,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("fit with {m} factors failed: {source}")]
    FitFailed {
        m: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
