use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    Dimension {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("singular Gram matrix (condition number {condition:.3e} exceeds {limit:.0e})")]
    Singular { condition: f64, limit: f64 },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("malformed weight header: {0}")]
    MalformedHeader(String),

    #[error("shape mismatch against embedded config: {0}")]
    ShapeMismatch(String),

    #[error("truncated blob: expected {expected} bytes after offset, found {found}")]
    TruncatedBlob { expected: usize, found: usize },

    #[error("PDB parse error on line {line}: {message}")]
    PdbParse { line: usize, message: String },

    #[error("region not found: {query}")]
    RegionNotFound { query: String },

    #[error("ambiguous region: {query} occurs {count} times")]
    AmbiguousRegion { query: String, count: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate labels: need at least one positive and one negative")]
    DegenerateLabels,

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
