//! Losses, optimizer, learning-rate schedule, metrics, and the training loop.

mod loss;
mod metrics;
mod optim;
mod run;

pub use loss::{ce_label_smoothing, smoothed_targets, total_loss};
pub use metrics::{compute_metrics, MetricsReport};
pub use optim::{lr_schedule, AdamW, ADAM_EPS, BETA1, BETA2};
pub use run::{evaluate, predict, train_run, EpochLog, Evaluation, TrainConfig, TrainOutcome};
