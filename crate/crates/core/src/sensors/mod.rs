//! Sensor profiles, frame sources and the preprocessing pipeline.

mod frame;
mod handle;
pub(crate) mod preprocess;
mod profile;
mod source;

pub use frame::Frame;
pub use handle::FrameHandle;
pub use preprocess::{
    acquire_reference, fit_normalization, preprocess, preprocess_into, to_grayscale, DEFAULT_REFERENCE_FRAMES, LUMA,
};
pub use profile::{lookup_profile, register_profile, registered_profiles, PreprocessSpec, SensorProfile, MONO_SUFFIX};
pub use source::{
    write_sequence, FrameList, FrameSource, ImageDirectory, SequenceFile, SequenceHeader, SyntheticStream, DEFAULT_FPS,
    SEQUENCE_MAGIC,
};
