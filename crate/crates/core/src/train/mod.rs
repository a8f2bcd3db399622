//! Optimization: Adam, plateau learning-rate schedule and the training loop.

mod adam;
mod history;
mod schedule;
mod trainer;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use history::{EpochRecord, TrainHistory};
pub use schedule::{reduce_lr_on_plateau, PlateauScheduler, IMPROVEMENT_THRESHOLD, MIN_LR};
pub use trainer::{evaluate, train, train_on_samples, TrainConfig, TrainOutcome};
