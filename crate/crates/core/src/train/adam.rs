use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::dim(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, p) in params.tensors().iter().enumerate() {
        if grads[i].shape() != p.shape() || state.m[i].shape() != p.shape() || state.v[i].shape() != p.shape() {
            return Err(Error::dim(
                "adam_step",
                format!(
                    "{}: param {:?}, grad {:?}, moment {:?}",
                    params.names()[i],
                    p.shape(),
                    grads[i].shape(),
                    state.m[i].shape()
                ),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let c1 = T::one() / (T::one() - T::of(libm::pow(cfg.beta1, t as f64)));
    let c2 = T::one() / (T::one() - T::of(libm::pow(cfg.beta2, t as f64)));
    let eps = T::of(cfg.eps);
    let lr = T::of(lr);
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((pv, &g), mv), vv) in p.data_mut().iter_mut().zip(grads[i].data()).zip(m).zip(v) {
            *mv = b1 * *mv + (T::one() - b1) * g;
            *vv = b2 * *vv + (T::one() - b2) * g * g;
            let m_hat = *mv * c1;
            let v_hat = *vv * c2;
            *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
