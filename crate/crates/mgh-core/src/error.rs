//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by any layer of the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shape mismatch; names both offending shapes.
    #[error("shape error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Reduction over an empty axis.
    #[error("empty reduction in {0}")]
    EmptyReduction(&'static str),

    /// A primitive produced NaN or Inf.
    #[error("non-finite value produced by {op} at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    /// Malformed on-disk payload (bad magic, version, or structure).
    #[error("format error in {path}: {reason} (offset {offset})")]
    Format {
        path: String,
        reason: String,
        offset: u64,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Well-formed container holding invalid values.
    #[error("data error in {path}: {reason}")]
    Data { path: String, reason: String },

    /// Feature-map height not divisible by a requested partition count.
    #[error("partition error: height {height} not divisible by {parts} parts")]
    Partition { height: usize, parts: usize },

    #[error("config error: {0}")]
    Config(String),

    /// Inconsistent hypergraph topology.
    #[error("topology error: {0}")]
    Topology(String),

    /// Batch violates a loss precondition.
    #[error("batch error: {0}")]
    Batch(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    /// Evaluation protocol violation.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Numeric failure (non-finite loss or gradient, failed probe).
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that indicate a numerical breakdown rather than
    /// invalid input; the CLI maps these to a distinct exit code.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Numeric(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
