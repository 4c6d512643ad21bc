/// `lr_min + (lr_max - lr_min) * (1 + cos(pi * t / period)) / 2`.
pub fn cosine_lr(t: f64, period: f64, lr_min: f64, lr_max: f64) -> f64 {
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + libm::cos(core::f64::consts::PI * t / period))
}

/// Cosine annealing with warm restarts every `cycle_len` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub cycle_len: usize,
}

impl LrSchedule {
    /// Defaults: `lr_max = initial`, `lr_min = initial / 100`, 10-epoch cycles.
    pub fn from_initial(initial: f64) -> Self {
        LrSchedule {
            lr_max: initial,
            lr_min: initial / 100.0,
            cycle_len: 10,
        }
    }

    /// Learning rate for 0-based `epoch`.
    pub fn lr(&self, epoch: usize) -> f64 {
        let period = self.cycle_len.max(1);
        let t = (epoch % period) as f64;
        cosine_lr(t, period as f64, self.lr_min, self.lr_max)
    }
}
