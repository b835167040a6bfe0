use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed line in a taxonomy or config file (1-based line number).
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A structurally well-formed prior that violates the partition rules.
    #[error("invalid semantic prior: {0}")]
    Validation(String),

    /// Binary dataset payload problem, reported with the byte offset where it was detected.
    #[error("{format} format error at byte offset {offset}: {message}")]
    Format {
        format: &'static str,
        offset: u64,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged: non-finite composite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("enumeration too large: {labelings} labelings (support {support}, classes {classes})")]
    EnumerationTooLarge {
        labelings: u128,
        support: usize,
        classes: usize,
    },

    #[error("degenerate margin at support point {point}: top-2 gap {gap:.3e} < {min_gap:.0e}")]
    DegenerateMargin { point: usize, gap: f64, min_gap: f64 },

    #[error("cannot read {}: {source}", path.display())]
    ReadFile { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn read_file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::ReadFile {
            path: path.into(),
            source,
        }
    }
}
