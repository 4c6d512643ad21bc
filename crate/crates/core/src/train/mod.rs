//! Optimisation: Adam, cosine warm restarts, the learning-rate finder and the
//! early-stopping training loop.

mod adam;
mod lr_find;
mod schedule;
mod task;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use lr_find::{lr_find, LrFindConfig, LrFindResult};
pub use schedule::{cosine_lr, LrSchedule};
pub use task::{for_each_batch, predict_dataset, DatasetPredictions, TUNetTask, TaskSettings};
pub use trainer::{
    fit, train, BatchContext, Clock, EarlyStopping, EpochRecord, Evaluation, NoClock, StopReason, TrainConfig,
    TrainLog, TrainOutcome, TrainTask,
};
