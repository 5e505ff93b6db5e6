//! Synthetic tactile frames and labeled datasets with known contact
//! geometry.

mod dataset;
mod scene;
mod slip;

pub use dataset::*;
pub use scene::*;
pub use slip::{gen_slip_sequence, Pose, SlipScript};
