use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward root must be a scalar, got shape {shape:?}")]
    NotScalar { shape: [usize; 2] },
    #[error("graph already consumed by a previous backward pass")]
    GraphConsumed,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing camera file {0}")]
    MissingCamera(PathBuf),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("size mismatch for {what}: expected {expected:?}, got {actual:?}")]
    SizeMismatch {
        what: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("mask {path} is not binary (found value {value})")]
    NonBinaryMask { path: PathBuf, value: u8 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("pixel ({row}, {col}) outside {width}x{height} image")]
    PixelOutOfBounds {
        row: usize,
        col: usize,
        width: usize,
        height: usize,
    },
    #[error("synthetic scene has no primitives")]
    EmptyScene,
    #[error("unsupported format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("unsorted samples along ray")]
    UnsortedSamples,
    #[error("mask is empty")]
    EmptyMask,
    #[error("missing predictions for views: {0:?}")]
    MissingPredictions(Vec<String>),
    #[error("metric_select fusion requires reference images")]
    MissingReferences,
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("perceptual scorer failed: {0}")]
    Scorer(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    PngDecode(#[from] png::DecodingError),
    #[error(transparent)]
    PngEncode(#[from] png::EncodingError),
}
