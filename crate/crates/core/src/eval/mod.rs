//! Loss, metrics, training loop, and rollouts.

pub mod loss;
pub mod metrics;
pub mod rollout;
pub mod train;

pub use loss::{composite_loss, AccForm, LossBreakdown};
pub use metrics::{metrics, quantile_transform, Metrics, VariableMetrics, LOG_FLOOR, VARIABLES};
pub use rollout::{rollout, FnoPredictor, OraclePredictor, Predictor, RolloutResult, StepContext};
pub use train::{
    baseline_configuration, constant_predictor_metrics, evaluate, train, EpochClock, EpochReport, StopperConfig, TrainOutput,
    TrainSettings,
};
