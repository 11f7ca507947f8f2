//! Core engine for video anomaly detection: a small autodiff tensor core,
//! the convolutional + recurrent sequence classifier, the frame pipeline,
//! dataset tooling, and the training/evaluation harness.

pub mod dataset;
pub mod error;
pub mod layers;
pub mod rng;
pub mod stream;
pub mod tensor;
pub mod train;
pub mod video;

pub use error::{Error, Result};
pub use layers::{BackboneKind, CellKind, LossKind, ModelConfig, SequenceClassifier};
pub use tensor::{sgd_step, Padding, Parameter, Scalar, Tape, Tensor, ValueId};
