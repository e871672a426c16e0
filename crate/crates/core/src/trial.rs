//! Completed (or stopped) evaluations and their objectives.

use serde::{Deserialize, Serialize};

use crate::space::Configuration;

/// Both objectives are maximized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    /// Negative validation MSE.
    pub neg_mse: f64,
    /// Validation anomaly correlation.
    pub acc: f64,
}

impl ObjectiveVector {
    pub fn new(neg_mse: f64, acc: f64) -> Self {
        ObjectiveVector { neg_mse, acc }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.neg_mse, self.acc]
    }

    pub fn is_finite(&self) -> bool {
        self.neg_mse.is_finite() && self.acc.is_finite()
    }

    pub fn componentwise_min(&self, other: &Self) -> Self {
        ObjectiveVector::new(self.neg_mse.min(other.neg_mse), self.acc.min(other.acc))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stopper {
    #[default]
    None,
    ConstantPredictor,
    EpochTime,
}

impl Stopper {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stopper::None => "none",
            Stopper::ConstantPredictor => "constant_predictor",
            Stopper::EpochTime => "epoch_time",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Success {
        objectives: ObjectiveVector,
    },
    /// Stopped early, diverged, or the worker died. `partial` holds the
    /// best validation objectives seen before stopping, when any.
    Failed {
        reason: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        partial: Option<ObjectiveVector>,
    },
}

/// Wall-clock instants in seconds since the Unix epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    pub submit: f64,
    pub start: f64,
    pub finish: f64,
}

pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub config: Configuration,
    pub outcome: Outcome,
    /// Objectives the optimizer used in place of a failed outcome.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imputed: Option<ObjectiveVector>,
    pub epochs_run: u32,
    pub stopper: Stopper,
    pub wall_seconds: f64,
    pub seed: u64,
    pub timestamps: Timestamps,
}

impl TrialRecord {
    pub fn success(trial_id: u64, config: Configuration, objectives: ObjectiveVector) -> Self {
        TrialRecord {
            trial_id,
            config,
            outcome: Outcome::Success { objectives },
            imputed: None,
            epochs_run: 0,
            stopper: Stopper::None,
            wall_seconds: 0.0,
            seed: 0,
            timestamps: Timestamps::default(),
        }
    }

    pub fn failed<S: Into<String>>(trial_id: u64, config: Configuration, reason: S) -> Self {
        TrialRecord {
            outcome: Outcome::Failed { reason: reason.into(), partial: None },
            ..TrialRecord::success(trial_id, config, ObjectiveVector::new(0.0, 0.0))
        }
    }

    pub fn objectives(&self) -> Option<ObjectiveVector> {
        match &self.outcome {
            Outcome::Success { objectives } => Some(*objectives),
            Outcome::Failed { .. } => None,
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self.outcome, Outcome::Success { .. })
    }

    /// Measured objectives, else the imputed ones.
    pub fn effective_objectives(&self) -> Option<ObjectiveVector> {
        self.objectives().or(self.imputed)
    }
}
