//! Touch processing for vision-based tactile sensors.
//!
//! Raw frames from DIGIT, OmniTact or GelSight style sensors are turned into
//! touch/no-touch and slip/no-slip decisions and contact-area ellipses. The
//! crate carries its own small neural network core, a model registry with
//! transfer-learning support, and a synthetic data generator.

pub mod error;
pub mod numerics;
pub mod sensors;
pub mod contact;
pub mod registry;
pub mod touchdetect;
pub mod slipdetect;
pub mod synthdata;
mod fsio;
mod kit;

pub use error::{Error, Result};
pub use kit::TactileKit;
