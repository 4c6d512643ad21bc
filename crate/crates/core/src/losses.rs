//! Classification, segmentation and joint training losses.
//!
//! - focal loss `-(1-p_t)^gamma ln(p_t)`, averaged over every (sample, class)
//! - dice `(2 sum r*y + eps) / (sum r + sum y + eps)` per channel
//! - dice loss `1 - mean dice`
//! - joint loss `alpha * seg + (1 - alpha) * cls`

use alloc::format;

use crate::autodiff::{dice_coefficient, focal_term, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the segmentation loss.
    pub alpha: f64,
    /// Focusing exponent of the focal loss.
    pub gamma: f64,
    pub dice_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.4,
            gamma: 2.0,
            dice_epsilon: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::usage(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::usage(format!("gamma {} must be >= 0", self.gamma)));
        }
        if !(self.dice_epsilon >= 0.0) {
            return Err(Error::usage(format!(
                "dice_epsilon {} must be >= 0",
                self.dice_epsilon
            )));
        }
        Ok(())
    }
}

/// Mean focal loss of `probs` `[N,C]` against binary `labels` of the same shape.
pub fn focal_loss<T: Scalar>(g: &mut Graph<T>, probs: Var, labels: &Tensor<T>, gamma: f64) -> Result<Var> {
    g.focal_loss(probs, labels, T::of(gamma))
}

/// Focal loss evaluated directly on values, without a graph.
pub fn focal_value<T: Scalar>(probs: &Tensor<T>, labels: &Tensor<T>, gamma: f64) -> Result<T> {
    if probs.shape() != labels.shape() {
        return Err(Error::dim(
            "focal_loss",
            format!("probs {:?} vs labels {:?}", probs.shape(), labels.shape()),
        ));
    }
    let g = T::of(gamma);
    let total: T = probs
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&p, &y)| focal_term(p, y, g))
        .sum();
    Ok(total / T::of(probs.len() as f64))
}

/// Dice coefficient of `r` against `y`.
///
/// The last two axes are the pixel plane; every leading index is a separate
/// channel and the per-channel scores are averaged. A channel where both maps
/// are empty and `epsilon == 0` scores 1.
pub fn dice<T: Scalar>(r: &Tensor<T>, y: &Tensor<T>, epsilon: f64) -> Result<T> {
    if r.shape() != y.shape() {
        return Err(Error::dim(
            "dice",
            format!("{:?} vs {:?}", r.shape(), y.shape()),
        ));
    }
    let plane = match r.shape() {
        [h, w] => h * w,
        s if s.len() > 2 => s[s.len() - 2] * s[s.len() - 1],
        s => return Err(Error::dim("dice", format!("need at least [H,W], got {s:?}"))),
    };
    let eps = T::of(epsilon);
    let channels = r.len() / plane;
    let total: T = r
        .data()
        .chunks(plane)
        .zip(y.data().chunks(plane))
        .map(|(a, b)| dice_coefficient(a, b, eps))
        .sum();
    Ok(total / T::of(channels as f64))
}

/// `1 - mean over (N,C)` of the smoothed dice of `seg_probs` `[N,C,H,W]` against `target`.
pub fn dice_loss<T: Scalar>(g: &mut Graph<T>, seg_probs: Var, target: &Tensor<T>, epsilon: f64) -> Result<Var> {
    g.dice_loss(seg_probs, target, T::of(epsilon))
}

/// `alpha * seg + (1 - alpha) * cls`.
pub fn joint_loss<T: Scalar>(g: &mut Graph<T>, seg: Var, cls: Var, alpha: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::usage(format!("alpha {alpha} outside [0, 1]")));
    }
    let a = g.scale(seg, T::of(alpha));
    let b = g.scale(cls, T::of(1.0 - alpha));
    g.add(a, b)
}
