use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("contour out of frame: polygon does not intersect the grid extent")]
    ContourOutOfFrame,

    #[error("no contour at level {level}")]
    NoContour { level: f64 },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("malformed PGM header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("unsupported bit depth in {path}: maxval {maxval}, expected 65535")]
    BitDepth { path: PathBuf, maxval: u32 },

    #[error("no signal: frame is all zero")]
    NoSignal,

    #[error("empty sequence")]
    EmptySequence,

    #[error("no melt pool: peak temperature {peak_k:.1} K does not exceed {threshold_k:.1} K")]
    NoMeltPool { peak_k: f64, threshold_k: f64 },

    #[error("undefined correlation: zero variance")]
    UndefinedCorrelation,

    #[error("output path already exists: {0}")]
    PathCollision(PathBuf),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for invalid input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 3,
            Error::Io { .. } => 1,
            _ => 2,
        }
    }
}
