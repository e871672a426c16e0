//! Objective functions the executor can run.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{train, TrainSettings};
use crate::ocean::{load_ensemble, PairedDataset, DEFAULT_RATIOS};
use crate::seed;
use crate::space::{Configuration, SearchSpace};
use crate::synthetic::{synthetic_objectives, synthetic_space};
use crate::trial::{unix_now, Timestamps, TrialRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub trial_id: u64,
    pub config: Configuration,
    pub seed: u64,
}

pub trait Evaluator: Send + Sync {
    /// Never fails: problems become `Failed` records.
    fn evaluate(&self, job: &Job) -> TrialRecord;
}

/// Serializable recipe for building an evaluator inside a worker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvaluatorSpec {
    /// The synthetic two-objective problem, optionally with random
    /// durations, forced divergence, or a hard crash on one trial.
    Synthetic {
        #[serde(default)]
        min_ms: u64,
        #[serde(default)]
        max_ms: u64,
        #[serde(default)]
        diverge: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        crash_on: Option<u64>,
    },
    /// Trains an FNO on an ensemble file.
    Train {
        data: PathBuf,
        split_seed: u64,
        #[serde(default = "default_ratios")]
        ratios: [f64; 3],
        settings: TrainSettings,
    },
}

fn default_ratios() -> [f64; 3] {
    DEFAULT_RATIOS
}

impl EvaluatorSpec {
    pub fn synthetic() -> Self {
        EvaluatorSpec::Synthetic { min_ms: 0, max_ms: 0, diverge: false, crash_on: None }
    }

    pub fn build(&self) -> Result<Arc<dyn Evaluator>> {
        Ok(match self {
            EvaluatorSpec::Synthetic { min_ms, max_ms, diverge, crash_on } => Arc::new(SyntheticEvaluator {
                space: synthetic_space(),
                min_ms: *min_ms,
                max_ms: (*max_ms).max(*min_ms),
                diverge: *diverge,
                crash_on: *crash_on,
            }),
            EvaluatorSpec::Train { data, split_seed, ratios, settings } => {
                let ens = load_ensemble(data)?;
                let data = PairedDataset::new(&ens, *ratios, *split_seed)?;
                Arc::new(TrainEvaluator { data: Arc::new(data), settings: settings.clone() })
            }
        })
    }
}

pub struct SyntheticEvaluator {
    space: SearchSpace,
    min_ms: u64,
    max_ms: u64,
    diverge: bool,
    crash_on: Option<u64>,
}

impl Evaluator for SyntheticEvaluator {
    fn evaluate(&self, job: &Job) -> TrialRecord {
        let start = unix_now();
        if self.crash_on == Some(job.trial_id) {
            eprintln!("worker: simulated crash on trial {}", job.trial_id);
            std::process::abort();
        }
        if self.max_ms > 0 {
            let ms = seed::rng(seed::derive_tagged(job.seed, "duration", 0)).random_range(self.min_ms..=self.max_ms);
            std::thread::sleep(Duration::from_millis(ms));
        }
        let mut record = if self.diverge {
            TrialRecord::failed(job.trial_id, job.config.clone(), "divergence: non-finite loss at epoch 1")
        } else {
            match synthetic_objectives(&self.space, &job.config) {
                Ok(o) => TrialRecord::success(job.trial_id, job.config.clone(), o),
                Err(e) => TrialRecord::failed(job.trial_id, job.config.clone(), e.to_string()),
            }
        };
        record.seed = job.seed;
        record.epochs_run = 1;
        let finish = unix_now();
        record.wall_seconds = finish - start;
        record.timestamps = Timestamps { submit: start, start, finish };
        record
    }
}

pub struct TrainEvaluator {
    pub data: Arc<PairedDataset>,
    pub settings: TrainSettings,
}

impl Evaluator for TrainEvaluator {
    fn evaluate(&self, job: &Job) -> TrialRecord {
        match train(job.trial_id, &job.config, &self.data, &self.settings, job.seed, |r| {
            log::debug!("trial {} epoch {} val_mse {:.5}", job.trial_id, r.epoch, r.val_mse)
        }) {
            Ok(out) => out.record,
            Err(e) => {
                let mut r = TrialRecord::failed(job.trial_id, job.config.clone(), e.to_string());
                r.seed = job.seed;
                r
            }
        }
    }
}
