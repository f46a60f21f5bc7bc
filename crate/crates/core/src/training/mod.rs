//! Loss and metrics, Adam, the training loop and evaluation.

mod metrics;
mod optim;
mod trainer;

pub use metrics::{mae, mape, mape_loss, rmse};
pub use optim::{adam_step, clip_grad_norm, grad_norm, AdamConfig, AdamState};
pub use trainer::{
    evaluate, predict_trips, train, write_history, HistoryRow, MetricsReport, TrainConfig, TrainOutcome,
};

pub(crate) use trainer::percentile;
