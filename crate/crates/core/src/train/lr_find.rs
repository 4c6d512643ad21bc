use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::trainer::{BatchContext, TrainTask};
use super::{adam_step, AdamConfig, AdamState};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rng::{mix, stream_rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrFindConfig {
    pub lr_min: f64,
    pub lr_max: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Exponential smoothing factor of the loss curve.
    pub smoothing: f64,
    /// Stop once the smoothed loss exceeds this multiple of its running minimum.
    pub divergence_factor: f64,
    /// The suggestion is the lr at the curve minimum divided by this.
    pub divisor: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for LrFindConfig {
    fn default() -> Self {
        LrFindConfig {
            lr_min: 1e-5,
            lr_max: 1.0,
            steps: 100,
            batch_size: 8,
            smoothing: 0.98,
            divergence_factor: 4.0,
            divisor: 10.0,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl LrFindConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 20 {
            return Err(Error::usage(format!("lr finder needs >= 20 steps, got {}", self.steps)));
        }
        if !(self.lr_min > 0.0 && self.lr_min < self.lr_max) {
            return Err(Error::usage(format!(
                "lr range must satisfy 0 < lr_min < lr_max, got {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::usage("batch_size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::usage(format!("smoothing {} outside [0, 1)", self.smoothing)));
        }
        if !(self.divergence_factor > 1.0) || !(self.divisor > 1.0) {
            return Err(Error::usage("divergence_factor and divisor must be > 1"));
        }
        Ok(())
    }

    /// Learning rate of step `i`, geometric from `lr_min` to `lr_max`.
    pub fn lr_at(&self, i: usize) -> f64 {
        let f = i as f64 / (self.steps - 1) as f64;
        self.lr_min * libm::pow(self.lr_max / self.lr_min, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrFindResult {
    /// `(lr, smoothed loss)` per completed step.
    pub curve: Vec<(f64, f64)>,
    /// Learning rate at the minimum of the smoothed curve.
    pub min_lr: f64,
    /// Learning rate at which the search detected divergence, if it did.
    pub divergence_lr: Option<f64>,
    pub suggested: f64,
}

/// Learning-rate range test: one Adam step per mini-batch while the rate
/// grows geometrically, tracking a bias-corrected smoothed loss.
pub fn lr_find<T, K>(task: &mut K, init: ModelParams<T>, cfg: &LrFindConfig) -> Result<LrFindResult>
where
    T: Scalar,
    K: TrainTask<T>,
{
    cfg.validate()?;
    let n = task.train_len();
    if n == 0 {
        return Err(Error::usage("training split is empty"));
    }
    let mut params = init;
    let mut state = AdamState::new(&params);
    let mut curve = Vec::with_capacity(cfg.steps);
    let mut avg = 0.0;
    let (mut best, mut min_lr) = (f64::INFINITY, cfg.lr_min);
    let mut divergence_lr = None;

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut pass = 0;
    for i in 0..cfg.steps {
        if cursor >= order.len() {
            order = (0..n).collect();
            order.shuffle(&mut stream_rng(cfg.seed, mix(&[0x6c72_6664, pass as u64])));
            cursor = 0;
            pass += 1;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let batch = &order[cursor..end];
        cursor = end;

        let lr = cfg.lr_at(i);
        let ctx = BatchContext {
            epoch: pass - 1,
            batch: i,
        };
        let (loss, grads) = task.batch_grads(&params, batch, ctx)?;
        if !loss.is_finite() || !grads.iter().all(Tensor::all_finite) {
            divergence_lr = Some(lr);
            break;
        }
        avg = cfg.smoothing * avg + (1.0 - cfg.smoothing) * loss;
        let smoothed = avg / (1.0 - libm::pow(cfg.smoothing, (i + 1) as f64));
        curve.push((lr, smoothed));
        if smoothed < best {
            best = smoothed;
            min_lr = lr;
        }
        if smoothed > cfg.divergence_factor * best {
            divergence_lr = Some(lr);
            break;
        }
        adam_step(&mut params, &grads, &mut state, lr, &cfg.adam)?;
    }
    if curve.is_empty() {
        return Err(Error::NonFinite {
            context: format!("lr finder loss at lr {}", cfg.lr_min),
        });
    }
    let suggested = (min_lr / cfg.divisor).max(cfg.lr_min);
    Ok(LrFindResult {
        curve,
        min_lr,
        divergence_lr,
        suggested,
    })
}
