//! The TUNet network: a U-Net encoder/decoder that emits one sigmoid
//! segmentation map per class, and a classification branch that fuses
//! bottleneck ("appearance") features with features computed from the
//! predicted maps ("structural"), followed by global average pooling and a
//! dense layer.

mod config;
mod params;
mod tunet;

pub use config::TUNetConfig;
pub use params::{BoundParams, ModelParams};
pub use tunet::{param_count, ForwardOutput, ForwardVars, LayerKind, LayerSpec, TUNet};
