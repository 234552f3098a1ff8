use thiserror::Error;

use crate::harness::RunResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("correlation undefined for a constant sequence")]
    UndefinedCorrelation,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("no validation examples for class {0}")]
    MissingPrototype(usize),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// The source ran out of unselected examples before the budget was met.
    /// Carries everything recorded up to that point.
    #[error("data source exhausted after selecting {} examples", .0.selected.len())]
    Exhausted(Box<RunResult>),

    /// Too many consecutive rejections with no model update in between.
    /// Happens when the few unselected examples left all score below the
    /// acceptance band of a cache that cannot refresh.
    #[error("selection stalled after selecting {} examples", .0.selected.len())]
    Stalled(Box<RunResult>),
}

/// Parse and validation failures for the binary and CSV embedding formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(u64),

    #[error("record {record}: label {label} >= class count {classes}")]
    LabelOutOfRange { record: usize, label: u32, classes: u32 },

    #[error("record {record}: non-finite feature at index {index}")]
    NonFiniteFeature { record: usize, index: usize },

    #[error("duplicate id {0}")]
    DuplicateId(u64),

    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(FormatError::Csv(e.to_string()))
    }
}
