//! Slip detection: classification of short frame windows taken from
//! labeled sequences.

mod detector;
mod sequence;

pub use detector::*;
pub use sequence::{
    FrameStore, SlipDataset, SlipManifestRow, SlipSequence, Split, SplitMode, DEFAULT_SEQUENCE_LENGTH,
    SLIP_MANIFEST_FILE,
};
