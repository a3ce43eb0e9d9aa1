use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("invalid page dimensions {width}x{height}")]
    InvalidPage { width: f64, height: f64 },

    #[error("element {0} has no neighbor (document has a single element)")]
    NoNeighbor(usize),

    #[error("element index {index} out of range for document with {len} elements")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown category label {0:?}")]
    UnknownCategory(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("masked_log_softmax called with every entry masked")]
    FullyMasked,

    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("undefined reward: both sequences are empty")]
    UndefinedReward,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint incompatible: {0}")]
    Incompatible(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

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

    /// True for errors caused by bad input (files, flags, data) rather than
    /// failures during computation.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::NonFinite(_) | Error::Shape(_) | Error::FullyMasked | Error::NotScalar(_)
        )
    }
}
