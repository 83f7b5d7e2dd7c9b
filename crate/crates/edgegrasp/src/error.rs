use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("too few points for normal estimation (got {0}, need at least 3)")]
    TooFewPoints(usize),

    #[error("knn graph requires at least 2 points (got {0})")]
    TooFewForKnn(usize),

    #[error("sample size {requested} exceeds point count {available}")]
    SampleTooLarge { requested: usize, available: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point cloud has no normals and no viewpoint to estimate them from")]
    MissingNormals,

    #[error("no valid approach points")]
    NoValidApproachPoints,

    #[error("rendered view is empty (no primitive hit by any ray)")]
    EmptyView,

    #[error("failed to place primitive after {0} attempts")]
    PlacementFailed(usize),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("parse error in {path}: {details}")]
    Parse { path: PathBuf, details: String },

    #[error("unsupported cloud format: {0}")]
    UnsupportedFormat(String),

    #[error("bad file content: {0}")]
    BadFile(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 usage, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::SampleTooLarge { .. } => 2,
            Error::NonFinite(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
