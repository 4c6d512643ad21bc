use alloc::format;
use alloc::vec::Vec;
use core::ops::ControlFlow;

use rand::seq::SliceRandom;

use super::task::{TUNetTask, TaskSettings};
use super::{adam_step, AdamConfig, AdamState, LrSchedule};
use crate::autodiff::Tensor;
use crate::data::{AugmentConfig, Dataset, DEFAULT_GREEN_THRESHOLD};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::{ModelParams, TUNet};
use crate::rng::{mix, stream_rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-loss improvement before stopping.
    pub patience: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub green_threshold: f64,
    /// Seed for shuffling, augmentation and dropout.
    pub seed: u64,
    /// Seed for parameter initialisation.
    pub init_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            max_epochs: 50,
            patience: 5,
            schedule: LrSchedule::from_initial(0.02),
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            green_threshold: DEFAULT_GREEN_THRESHOLD,
            seed: 0,
            init_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::usage("batch_size must be >= 1"));
        }
        if self.patience < 1 {
            return Err(Error::usage("patience must be >= 1"));
        }
        let s = &self.schedule;
        if !(s.lr_max > 0.0) || !(s.lr_min > 0.0) || s.lr_min > s.lr_max {
            return Err(Error::usage(format!(
                "learning rates must satisfy 0 < lr_min <= lr_max, got {} and {}",
                s.lr_min, s.lr_max
            )));
        }
        if s.cycle_len < 1 {
            return Err(Error::usage("cycle_len must be >= 1"));
        }
        self.loss.validate()
    }

    fn task_settings(&self) -> TaskSettings {
        TaskSettings {
            loss: self.loss,
            augment: self.augment,
            green_threshold: self.green_threshold,
            seed: self.seed,
            eval_batch: self.batch_size.max(8),
        }
    }
}

/// Position of a mini-batch inside a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchContext {
    pub epoch: usize,
    pub batch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub f1_macro: f64,
}

/// What the training loop needs from a model/data pairing.
pub trait TrainTask<T: Scalar> {
    fn train_len(&self) -> usize;

    /// Mean loss over `batch` and its gradient, in parameter order.
    fn batch_grads(
        &mut self,
        params: &ModelParams<T>,
        batch: &[usize],
        ctx: BatchContext,
    ) -> Result<(f64, Vec<Tensor<T>>)>;

    fn evaluate(&mut self, params: &ModelParams<T>) -> Result<Evaluation>;
}

/// Wall-time source; the core has no clock of its own.
pub trait Clock {
    fn seconds(&mut self) -> f64;
}

/// Always reports zero elapsed time.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&mut self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1_macro: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().fold(None, |best: Option<&EpochRecord>, r| match best {
            Some(b) if !(r.val_loss < b.val_loss) => Some(b),
            _ => Some(r),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
    Observer,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters after the epoch with the lowest validation loss.
    pub best: ModelParams<T>,
    pub best_epoch: usize,
    pub last: ModelParams<T>,
    pub log: TrainLog,
    pub stop: StopReason,
}

/// Tracks the best validation loss and how long ago it was seen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Record a validation loss; returns `true` when it is a new best.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Epoch loop: seeded shuffle, mini-batch Adam steps at the scheduled rate,
/// validation, best-checkpoint tracking and early stopping.
///
/// `observer` sees every epoch record and may end the run early.
pub fn fit<T, K, C, F>(
    task: &mut K,
    init: ModelParams<T>,
    cfg: &TrainConfig,
    clock: &mut C,
    mut observer: F,
) -> Result<TrainOutcome<T>>
where
    T: Scalar,
    K: TrainTask<T>,
    C: Clock,
    F: FnMut(&EpochRecord, &ModelParams<T>) -> ControlFlow<()>,
{
    cfg.validate()?;
    let n = task.train_len();
    if n == 0 {
        return Err(Error::usage("training split is empty"));
    }
    let mut params = init;
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut state = AdamState::new(&params);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut log = TrainLog::default();
    let mut stop = StopReason::MaxEpochs;
    let start = clock.seconds();

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.schedule.lr(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(cfg.seed, mix(&[0x7368_7566, epoch as u64])));
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = task.batch_grads(&params, batch, BatchContext { epoch, batch: b })?;
            if !loss.is_finite() || !grads.iter().all(Tensor::all_finite) {
                return Err(Error::NonFinite {
                    context: format!("training loss at epoch {} batch {b}", epoch + 1),
                });
            }
            adam_step(&mut params, &grads, &mut state, lr, &cfg.adam)?;
            loss_sum += loss * batch.len() as f64;
        }
        let eval = task.evaluate(&params)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / n as f64,
            val_loss: eval.loss,
            val_f1_macro: eval.f1_macro,
            lr,
            seconds: clock.seconds() - start,
        };
        log.records.push(record);
        if stopper.observe(eval.loss) {
            best = params.clone();
            best_epoch = epoch + 1;
        }
        if observer(&record, &params).is_break() {
            stop = StopReason::Observer;
            break;
        }
        if stopper.should_stop() {
            stop = StopReason::EarlyStopping;
            break;
        }
    }
    if best_epoch == 0 {
        best = params.clone();
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: params,
        log,
        stop,
    })
}

/// Train TUNet on `train` with early stopping on `val`.
pub fn train<T, C, F>(
    model: &TUNet,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    clock: &mut C,
    observer: F,
) -> Result<TrainOutcome<T>>
where
    T: Scalar,
    C: Clock,
    F: FnMut(&EpochRecord, &ModelParams<T>) -> ControlFlow<()>,
{
    if val.is_empty() {
        return Err(Error::usage("validation split is empty"));
    }
    let mut task = TUNetTask::<T>::new(model, train, val, cfg.task_settings())?;
    let init = model.init::<T>(cfg.init_seed);
    fit(&mut task, init, cfg, clock, observer)
}
