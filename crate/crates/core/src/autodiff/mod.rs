//! Dense tensors and reverse-mode automatic differentiation.

mod grad_check;
mod graph;
mod kernels;
mod tensor;

pub use grad_check::{grad_check, GradCheck, GradCheckReport, Probe};
pub use graph::{Graph, Var, PROB_CLAMP};
pub use tensor::Tensor;

pub(crate) use graph::{dice_coefficient, focal_term};
