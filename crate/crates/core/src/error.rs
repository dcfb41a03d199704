use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the PMF kernel layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PmfError {
    #[error("grid has zero total mass (sum {0:e})")]
    ZeroMass(f64),
    #[error("grid dimensions must be positive, got {rows}x{cols}")]
    EmptyGrid { rows: usize, cols: usize },
    #[error("value buffer of length {len} does not match {rows}x{cols}")]
    LengthMismatch { rows: usize, cols: usize, len: usize },
    #[error("grid holds a negative or non-finite value {value} at index {index}")]
    InvalidValue { index: usize, value: f64 },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("mass {0} is not within tolerance of 1")]
    NotNormalized(f64),
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("frame is empty")]
    EmptyFrame,
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("filter bank format error: {0}")]
    BankFormat(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("least-squares system is singular even with ridge {ridge:e}")]
    SingularSystem { ridge: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("model format error: {0}")]
    ModelFormat(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("class has no ground truth objects in the sequence")]
    ZeroGt,
    #[error("no sequences supplied")]
    NoSequences,
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("object {index} leaves the frame at frame {frame}")]
    ObjectOutOfFrame { index: usize, frame: usize },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
}

/// Errors from reading and writing the on-disk formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("bad header in {path}: {msg}")]
    Header { path: PathBuf, msg: String },
    #[error("image error on {path}: {msg}")]
    Image { path: PathBuf, msg: String },
}

impl FormatError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        FormatError::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
