//! End-to-end training of one configuration.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{composite_loss, AccForm};
use super::metrics::{MetricAccumulator, Metrics};
use crate::error::{Error, Result};
use crate::fno::{self, Checkpoint, FnoConfig, OptimState, OptimizerKind, ParamSet};
use crate::ocean::{PairIndex, PairedDataset, Subset};
use crate::seed;
use crate::space::Configuration;
use crate::trial::{unix_now, ObjectiveVector, Outcome, Stopper, Timestamps, TrialRecord};

pub const DEFAULT_GRACE_EPOCHS: u32 = 10;
pub const DEFAULT_EPOCH_TIME_LIMIT_S: f64 = 10.0;
/// Larger models are rejected before allocation.
pub const DEFAULT_MAX_PARAMS: usize = 16 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopperConfig {
    pub constant_predictor: bool,
    pub grace_epochs: u32,
    pub epoch_time: bool,
    pub epoch_time_limit_s: f64,
    #[serde(default)]
    pub clock: EpochClock,
}

/// What the epoch-time stopper measures.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochClock {
    #[default]
    Wall,
    /// CPU time of the training thread, insensitive to other workers
    /// sharing the same cores. Falls back to wall time where unsupported.
    ThreadCpu,
}

impl std::str::FromStr for EpochClock {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wall" => Ok(EpochClock::Wall),
            "thread_cpu" | "cpu" => Ok(EpochClock::ThreadCpu),
            _ => Err(Error::Config(format!("unknown epoch clock `{s}`"))),
        }
    }
}

impl EpochClock {
    fn start(self) -> EpochTimer {
        EpochTimer { clock: self, wall: Instant::now(), cpu: thread_cpu_seconds() }
    }
}

struct EpochTimer {
    clock: EpochClock,
    wall: Instant,
    cpu: Option<f64>,
}

impl EpochTimer {
    fn seconds(&self) -> f64 {
        match (self.clock, self.cpu, thread_cpu_seconds()) {
            (EpochClock::ThreadCpu, Some(a), Some(b)) => b - a,
            _ => self.wall.elapsed().as_secs_f64(),
        }
    }
}

#[cfg(unix)]
fn thread_cpu_seconds() -> Option<f64> {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: ts is a valid out-pointer.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    (rc == 0).then(|| ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9)
}

#[cfg(not(unix))]
fn thread_cpu_seconds() -> Option<f64> {
    None
}

impl Default for StopperConfig {
    fn default() -> Self {
        StopperConfig {
            constant_predictor: true,
            grace_epochs: DEFAULT_GRACE_EPOCHS,
            epoch_time: true,
            epoch_time_limit_s: DEFAULT_EPOCH_TIME_LIMIT_S,
            clock: EpochClock::Wall,
        }
    }
}

impl StopperConfig {
    pub fn disabled() -> Self {
        StopperConfig { constant_predictor: false, epoch_time: false, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grace_epochs < 1 {
            return Err(Error::Config("grace_epochs must be >= 1".into()));
        }
        if !(self.epoch_time_limit_s > 0.0) {
            return Err(Error::Config("epoch_time_limit_s must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub max_epochs: u32,
    pub stoppers: StopperConfig,
    pub acc_form: AccForm,
    pub max_params: usize,
    pub eval_batch: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            max_epochs: 30,
            stoppers: StopperConfig::default(),
            acc_form: AccForm::Pearson,
            max_params: DEFAULT_MAX_PARAMS,
            eval_batch: 16,
        }
    }
}

/// Epoch 0 describes the freshly initialized network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_neg_acc: f64,
    pub val_rse: Vec<f64>,
    pub val_acc: Vec<f64>,
    pub epoch_seconds: f64,
}

impl EpochReport {
    fn new(epoch: u32, train_loss: f64, m: &Metrics, epoch_seconds: f64) -> Self {
        EpochReport {
            epoch,
            train_loss,
            val_mse: m.mse,
            val_neg_acc: -m.acc,
            val_rse: m.variables.iter().map(|v| v.rse).collect(),
            val_acc: m.variables.iter().map(|v| v.acc).collect(),
            epoch_seconds,
        }
    }

    fn is_finite(&self) -> bool {
        self.train_loss.is_finite() && self.val_mse.is_finite() && self.val_neg_acc.is_finite()
    }
}

pub struct TrainOutput {
    pub record: TrialRecord,
    pub reports: Vec<EpochReport>,
    /// Best-epoch parameters; absent when training never produced finite metrics.
    pub checkpoint: Option<Checkpoint>,
}

/// Optimizer hyperparameters of a configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingHyper {
    pub alpha: f64,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl TrainingHyper {
    pub fn from_configuration(c: &Configuration) -> Result<Self> {
        let alpha = c.float("alpha")?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Alpha(alpha));
        }
        let batch = c.int("batch_size")?;
        if batch < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(TrainingHyper {
            alpha,
            optimizer: c.str("optimizer")?.parse()?,
            lr: c.float("lr")?,
            weight_decay: c.float("weight_decay")?,
            batch_size: batch as usize,
        })
    }
}

/// The reference architecture and optimizer used for comparisons.
pub fn baseline_configuration() -> Configuration {
    let mut c = Configuration::default();
    c.set("padding", false);
    c.set("padding_type", "constant");
    c.set("coord_feat", false);
    c.set("lift_act", "gelu");
    c.set("num_FNO", 4i64);
    c.set("num_latent_feat", 32i64);
    c.set("num_modes", 16i64);
    c.set("num_proj_layers", 2i64);
    c.set("proj_size", 16i64);
    c.set("proj_act", "silu");
    c.set("alpha", 0.5);
    c.set("optimizer", "Adam");
    c.set("lr", 1e-3);
    c.set("weight_decay", 0.0);
    c.set("batch_size", 8i64);
    c
}

/// Metrics of predicting the training climatology for every sample.
pub fn constant_predictor_metrics(data: &PairedDataset, subset: Subset) -> Metrics {
    let mut acc = MetricAccumulator::new(data.climatology(), data.mask());
    for p in data.pairs(subset) {
        acc.add_sample(data.climatology(), data.target(p));
    }
    acc.finish()
}

/// Metrics and mean composite loss of a network over a subset.
pub fn evaluate(
    cfg: &FnoConfig,
    params: &ParamSet,
    data: &PairedDataset,
    subset: Subset,
    alpha: f64,
    form: AccForm,
    eval_batch: usize,
) -> Result<(Metrics, f64)> {
    let mut acc = MetricAccumulator::new(data.climatology(), data.mask());
    let pairs = data.pairs(subset);
    let mut loss = 0.0;
    for chunk in pairs.chunks(eval_batch.max(1)) {
        let (x, y) = data.batch(chunk);
        let pred = fno::predict(cfg, params, &x)?;
        let (b, _) = composite_loss(&pred, &y, data.climatology(), data.mask_weights(), alpha, form)?;
        loss += b.loss * chunk.len() as f64;
        acc.add(&pred, &y);
    }
    Ok((acc.finish(), loss / pairs.len().max(1) as f64))
}

fn checkpoint_extra(data: &PairedDataset, config: &Configuration, best_epoch: u32) -> serde_json::Value {
    serde_json::json!({
        "hyperparameters": config,
        "normalizer": data.normalizer(),
        "split_seed": data.split_seed(),
        "grid": data.grid(),
        "best_epoch": best_epoch,
    })
}

/// Trains `config` for up to `settings.max_epochs` epochs.
///
/// Objectives are `(-best validation MSE, validation ACC at that epoch)`.
/// Stopped trials are reported as failures carrying their partial
/// objectives and the stopper tag; a non-finite loss fails the trial.
pub fn train(
    trial_id: u64,
    config: &Configuration,
    data: &PairedDataset,
    settings: &TrainSettings,
    trial_seed: u64,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainOutput> {
    let clock = Instant::now();
    let start = unix_now();
    settings.stoppers.validate()?;
    let cfg = FnoConfig::from_configuration(config, data.grid())?;
    let hyper = TrainingHyper::from_configuration(config)?;
    let finish = |mut record: TrialRecord, epochs: u32, stopper: Stopper| {
        record.seed = trial_seed;
        record.epochs_run = epochs;
        record.stopper = stopper;
        record.wall_seconds = clock.elapsed().as_secs_f64();
        record.timestamps = Timestamps { submit: start, start, finish: unix_now() };
        record
    };
    let n_params = cfg.param_count();
    if n_params > settings.max_params {
        let reason = format!("model has {n_params} parameters, above the limit of {}", settings.max_params);
        let record = finish(TrialRecord::failed(trial_id, config.clone(), reason), 0, Stopper::None);
        return Ok(TrainOutput { record, reports: Vec::new(), checkpoint: None });
    }

    let mut params = fno::init_params(&cfg, trial_seed);
    let mut optim = OptimState::new(hyper.optimizer, hyper.lr, hyper.weight_decay, &params);
    let mut train_pairs: Vec<PairIndex> = data.pairs(Subset::Train);
    let batch_size = hyper.batch_size.min(train_pairs.len()).max(1);
    let eval = |params: &ParamSet, subset| evaluate(&cfg, params, data, subset, hyper.alpha, settings.acc_form, settings.eval_batch);
    let const_mse = constant_predictor_metrics(data, Subset::Val).mse;

    let mut reports = Vec::new();
    let (_, train_loss0) = eval(&params, Subset::Train)?;
    let (val0, _) = eval(&params, Subset::Val)?;
    let first = EpochReport::new(0, train_loss0, &val0, 0.0);
    on_epoch(&first);
    let diverged = |epoch: u32, reports: Vec<EpochReport>, what: &str| TrainOutput {
        record: finish(
            TrialRecord::failed(trial_id, config.clone(), format!("divergence: {what} at epoch {epoch}")),
            epoch,
            Stopper::None,
        ),
        reports,
        checkpoint: None,
    };
    if !first.is_finite() {
        reports.push(first);
        return Ok(diverged(0, reports, "non-finite initial metrics"));
    }
    let mut best = (first.val_mse, -first.val_neg_acc, 0u32, params.clone());
    reports.push(first);

    let mut stopper = Stopper::None;
    let mut epochs_run = 0;
    for epoch in 1..=settings.max_epochs {
        let timer = settings.stoppers.clock.start();
        train_pairs.shuffle(&mut seed::rng(seed::derive_tagged(trial_seed, "shuffle", epoch as u64)));
        let mut loss_sum = 0.0;
        for chunk in train_pairs.chunks(batch_size) {
            let (x, y) = data.batch(chunk);
            let (pred, cache) = fno::forward(&cfg, &params, &x)?;
            let (b, grad) =
                composite_loss(&pred, &y, data.climatology(), data.mask_weights(), hyper.alpha, settings.acc_form)?;
            if !b.loss.is_finite() {
                return Ok(diverged(epoch, reports, "non-finite loss"));
            }
            let grads = fno::backward(&cfg, &params, &cache, &grad)?;
            drop(cache);
            match optim.step(&mut params, &grads) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient(name)) => {
                    return Ok(diverged(epoch, reports, &format!("non-finite gradient in {name}")));
                }
                Err(e) => return Err(e),
            }
            loss_sum += b.loss * chunk.len() as f64;
        }
        let (val, _) = eval(&params, Subset::Val)?;
        let report = EpochReport::new(epoch, loss_sum / train_pairs.len() as f64, &val, timer.seconds());
        on_epoch(&report);
        epochs_run = epoch;
        if !report.is_finite() {
            reports.push(report);
            return Ok(diverged(epoch, reports, "non-finite validation metrics"));
        }
        if report.val_mse < best.0 {
            best = (report.val_mse, -report.val_neg_acc, epoch, params.clone());
        }
        let slow = report.epoch_seconds > settings.stoppers.epoch_time_limit_s;
        reports.push(report);
        if settings.stoppers.epoch_time && slow {
            stopper = Stopper::EpochTime;
            break;
        }
        if settings.stoppers.constant_predictor && epoch == settings.stoppers.grace_epochs && best.0 > const_mse {
            stopper = Stopper::ConstantPredictor;
            break;
        }
    }

    let (best_mse, best_acc, best_epoch, best_params) = best;
    let objectives = ObjectiveVector::new(-best_mse, best_acc);
    let mut record = TrialRecord::success(trial_id, config.clone(), objectives);
    if stopper != Stopper::None {
        record.outcome = Outcome::Failed {
            reason: format!("stopped by {} stopper after epoch {epochs_run}", stopper.as_str()),
            partial: Some(objectives),
        };
    }
    let checkpoint = Checkpoint {
        config: cfg,
        seed: trial_seed,
        params: best_params,
        extra: checkpoint_extra(data, config, best_epoch),
    };
    Ok(TrainOutput { record: finish(record, epochs_run, stopper), reports, checkpoint: Some(checkpoint) })
}
