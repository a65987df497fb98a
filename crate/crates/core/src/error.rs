use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("search space has {size} subnets, enumeration cap is {cap}")]
    EnumerationCap { size: String, cap: u64 },

    #[error("no subnet satisfies the FLOPs budget {budget} after {draws} draws")]
    InfeasibleBudget { budget: u64, draws: usize },

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("empty matrix: {0}")]
    EmptyMatrix(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("integrity error in {path} at row {row}: {detail}")]
    Integrity {
        path: PathBuf,
        row: usize,
        detail: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
