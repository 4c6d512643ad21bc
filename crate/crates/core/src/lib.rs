//! Core of TUNet, a multi-task convolutional network that predicts per-class
//! segmentation maps and multi-label class probabilities from four-channel
//! fluorescence images.
//!
//! This crate only needs `alloc`. It contains:
//!
//! - [`autodiff`]: a dense tensor type and a reverse-mode differentiation graph
//!   with the convolution, pooling and fused loss operators the network needs.
//! - [`data`]: samples, target-mask generation, synthetic datasets, D4/lighting
//!   augmentation, splitting and label statistics.
//! - [`model`]: the TUNet encoder/decoder plus classification branch.
//! - [`losses`] and [`metrics`]: focal, dice and joint losses; F1 scores.
//! - [`postprocess`]: binarization, small-component removal and per-class
//!   threshold fitting.
//! - [`train`]: Adam, cosine warm restarts, the learning-rate finder and the
//!   early-stopping training loop.
//!
//! File formats, configuration and the command line live in the `tunet` crate.
#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod postprocess;
pub mod rng;
pub mod scalar;
pub mod train;

pub use autodiff::{Graph, Tensor, Var};
pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};
