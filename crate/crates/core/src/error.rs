use thiserror::Error;

/// Errors raised anywhere in the inference engine.
///
/// Variants split into two families: malformed input ([`Error::is_input`]) and
/// numerical failure. The CLI maps them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range for {n} areas")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("self-loop at area {0}")]
    SelfLoop(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: {what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("graph has no centroids")]
    MissingCentroids,

    #[error("zero count at area {0}; enable the +0.5 continuity correction to proceed")]
    ZeroCount(usize),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("undefined rate: {0}")]
    UndefinedRate(&'static str),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("factorization cache does not match the current edge state")]
    StaleFactorization,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than numerics.
    pub fn is_input(&self) -> bool {
        !matches!(
            self,
            Error::NotPositiveDefinite { .. } | Error::StaleFactorization | Error::Numerical(_)
        )
    }

    pub(crate) fn parse(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
