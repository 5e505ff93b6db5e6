//! Desk-scale neural network core: tensors, layers, backpropagation, Adam,
//! and a finite-difference gradient checker.

pub mod adam;
pub mod arch;
pub mod gradcheck;
mod kernels;
pub mod loss;
pub mod network;
pub mod rng;
pub mod spec;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, AdamState, DEFAULT_LEARNING_RATE};
pub use arch::{resnet_2d, resnet_3d, ResNetConfig};
pub use gradcheck::{finite_difference_check, GradCheckOptions, GradCheckReport, Precision};
pub use loss::{cross_entropy, softmax_rows};
pub use network::{Gradients, Mode, Network, ParamUnit, Tape, TrainableMask, UnitKind};
pub use spec::{LayerKind, LayerSpec, NetworkSpec};
pub use tensor::{Real, Tensor};
pub use train::{Budget, EpochStats, Prediction, SampleSet, TrainLog, TrainOptions};
