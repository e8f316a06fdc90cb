//! Noise-aware encoder-classifier for weakly labeled physiological time
//! series.
//!
//! The crate covers the whole workflow: pulse-wave preprocessing into
//! normalized feature matrices, a per-channel stacked linear encoder with
//! self-supervised pre-training, a depthwise/separable convolution
//! classifier trained by hand-rolled backpropagation, confidence-learning
//! noise filtering over cross-validated predictions, and the two-stage
//! experiment pipeline that ties it together. The `tnanet` binary exposes
//! every step as a subcommand.

#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod confidence;
pub mod config;
pub mod dbn;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod manifest;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod ppg;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use layers::ProbPair;
pub use ppg::FeatureMatrix;
pub use tensor::Tensor;
