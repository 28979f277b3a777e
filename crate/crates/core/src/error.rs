use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed embedding line {0}")]
    MalformedLine(usize),

    #[error("embedding table is empty")]
    EmptyTable,

    #[error("query vector has zero norm")]
    ZeroQuery,

    #[error("query has dimension {got}, table has {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("token {position}: {source}")]
    AtPosition {
        position: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("no output sequence reached the minimum support of {0} under both inputs")]
    InsufficientSupport(u64),

    #[error("{failed} of {total} records failed, above the 1% error budget")]
    ErrorBudgetExceeded { failed: usize, total: usize },

    #[error("record {line}: {message}")]
    BadRecord { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn at(self, position: usize) -> Error {
        Error::AtPosition {
            position,
            source: Box::new(self),
        }
    }
}
