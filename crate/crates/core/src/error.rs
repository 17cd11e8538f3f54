use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: cannot parse {cell:?} as a number")]
    Parse {
        path: PathBuf,
        line: u64,
        cell: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate normalization range: min = max = {0}")]
    DegenerateRange(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error("inconsistent parameter {name}: {msg}")]
    ShapeInconsistency { name: String, msg: String },

    #[error("truncated model payload: {0}")]
    Truncated(String),

    #[error("malformed model payload: {0}")]
    Malformed(String),

    #[error("missing gradient for parameter {0}")]
    MissingGradient(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    Divergence {
        epoch: usize,
        batch: usize,
        detail: String,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            op,
            msg: msg.into(),
        }
    }
}
