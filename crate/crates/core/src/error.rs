use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("missing header row in {0}")]
    MissingHeader(PathBuf),

    #[error("attribute `{attr}` code {code} outside domain [0, {size}) (row {row})")]
    DomainViolation {
        attr: String,
        code: i64,
        size: usize,
        row: usize,
    },

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("preprocessing dropped every row")]
    AllRowsDropped,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("query {0:?} does not match")]
    QueryMismatch(Vec<usize>),

    #[error("brute-force search exceeded its node budget of {cap}")]
    CapExceeded { cap: u64 },

    #[error("joint domain of {cells} cells is too large for dense mode (limit {limit})")]
    DomainTooLarge { cells: usize, limit: usize },

    #[error("loss evaluated to a non-finite value")]
    NonFiniteLoss,

    #[error("remez exchange did not converge after {iterations} iterations (best error {best_error})")]
    NonConvergence {
        iterations: usize,
        best_error: f64,
        best: Box<crate::polyapprox::Polynomial>,
    },

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
}

pub fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
