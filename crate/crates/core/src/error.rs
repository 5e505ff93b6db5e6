use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A layer cannot accept the shape produced by its predecessor.
    #[error("layer {layer} ({kind}): {message}")]
    Composition {
        layer: usize,
        kind: String,
        message: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("gradient tape does not belong to this network state: {0}")]
    StaleTape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sensor profile `{0}` is already registered")]
    DuplicateProfile(String),

    #[error("unknown sensor profile `{0}`")]
    UnknownProfile(String),

    #[error("sensor profile mismatch: expected {expected}, got {actual}")]
    ProfileMismatch { expected: String, actual: String },

    #[error("reference frame required but not provided")]
    MissingReference,

    #[error("frame source exhausted: wanted {wanted} frames, got {got}")]
    NotEnoughFrames { wanted: usize, got: usize },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("stratification infeasible: stratum {stratum} has {count} samples, fewer than k = {k}")]
    Stratification {
        stratum: String,
        count: usize,
        k: usize,
    },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("window [{start}, {end}] out of range for a sequence of {len} frames")]
    WindowOutOfRange { start: usize, end: usize, len: usize },

    #[error("expected a window of {expected} frames, got {actual}")]
    WindowLength { expected: usize, actual: usize },

    #[error("degenerate region at ({centroid_row:.2}, {centroid_col:.2}), semi-major {semi_major:.3}")]
    DegenerateRegion {
        centroid_row: f64,
        centroid_col: f64,
        semi_major: f64,
    },

    #[error("incomplete artifact metadata: {0}")]
    IncompleteMetadata(String),

    #[error("corrupt artifact {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("unsupported artifact format version {0}")]
    UnsupportedVersion(u16),

    #[error("no registry entry for {key}; available: [{}]", available.join(", "))]
    NotFound { key: String, available: Vec<String> },

    #[error("task mismatch: model is {model}, requested {requested}")]
    TaskMismatch { model: String, requested: String },

    #[error("download failed for {uri}: {reason}")]
    Download { uri: String, reason: String },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

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
