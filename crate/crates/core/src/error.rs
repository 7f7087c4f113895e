use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("incompatible grids: {0}")]
    IncompatibleGrids(String),

    #[error("density has zero mass")]
    ZeroMass,

    #[error("mass {found} differs from the required {expected}")]
    MassMismatch { expected: f64, found: f64 },

    #[error("leak {leak:e} exceeds the budget {budget:e}")]
    LeakBudget { leak: f64, budget: f64 },

    #[error("time {0} is not on the record grid")]
    OffGrid(f64),

    #[error("order violation: {0}")]
    OrderViolation(String),

    #[error("coupling invariant broken: {0}")]
    CouplingInvariant(String),

    #[error("malformed density spec: {0}")]
    MalformedSpec(String),

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
