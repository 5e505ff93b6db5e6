//! Touch detection: binary classification of single frames, optionally
//! paired with a per-device reference frame.

mod dataset;
mod detector;
pub mod folds;

pub use dataset::{ManifestRow, TouchDataset, TouchSample, MANIFEST_FILE};
pub use detector::*;
