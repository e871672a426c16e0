//! Report tables derived from a results log.

use std::path::Path;

use anyhow::{bail, Result};
use oceanhpo_core::eval::quantile_transform;
use oceanhpo_core::{pareto_front, SearchSpace, TrialRecord, Value};
use serde::Serialize;

fn cell(v: Option<&Value>) -> String {
    match v {
        None => String::new(),
        Some(Value::Bool(b)) => b.to_string(),
        Some(Value::Int(i)) => i.to_string(),
        Some(Value::Float(x)) => format!("{x:e}"),
        Some(Value::Str(s)) => s.clone(),
    }
}

fn num(x: Option<f64>) -> String {
    x.map(|v| format!("{v:e}")).unwrap_or_default()
}

fn status(r: &TrialRecord) -> &'static str {
    if r.is_success() {
        "success"
    } else {
        "failed"
    }
}

/// Successful trials with their quantile-transformed `(mse, neg_acc)` and
/// the sum of the two (lower is better).
pub struct Scores {
    pub trials: Vec<usize>,
    pub mse: Vec<f64>,
    pub neg_acc: Vec<f64>,
    pub q_mse: Vec<f64>,
    pub q_neg_acc: Vec<f64>,
}

impl Scores {
    pub fn new(records: &[TrialRecord]) -> Self {
        let trials: Vec<usize> = (0..records.len()).filter(|&i| records[i].is_success()).collect();
        let objs: Vec<_> = trials.iter().map(|&i| records[i].objectives().unwrap()).collect();
        let mse: Vec<f64> = objs.iter().map(|o| -o.neg_mse).collect();
        let neg_acc: Vec<f64> = objs.iter().map(|o| -o.acc).collect();
        let q_mse = quantile_transform(&mse);
        let q_neg_acc = quantile_transform(&neg_acc);
        Scores { trials, mse, neg_acc, q_mse, q_neg_acc }
    }

    pub fn sum(&self, k: usize) -> f64 {
        self.q_mse[k] + self.q_neg_acc[k]
    }

    /// Index into `records` of the best trial; ties go to the lower id.
    pub fn best(&self) -> Option<(usize, usize)> {
        (0..self.trials.len())
            .min_by(|&a, &b| self.sum(a).total_cmp(&self.sum(b)).then(a.cmp(&b)))
            .map(|k| (k, self.trials[k]))
    }
}

#[derive(Serialize)]
pub struct Best<'a> {
    pub trial_id: u64,
    pub config: &'a oceanhpo_core::Configuration,
    pub val_mse: f64,
    pub val_acc: f64,
    pub quantile_mse: f64,
    pub quantile_neg_acc: f64,
    pub score: f64,
}

pub fn best(records: &[TrialRecord]) -> Result<Best<'_>> {
    let s = Scores::new(records);
    let Some((k, i)) = s.best() else { bail!("no successful trials in the log") };
    let r = &records[i];
    Ok(Best {
        trial_id: r.trial_id,
        config: &r.config,
        val_mse: s.mse[k],
        val_acc: -s.neg_acc[k],
        quantile_mse: s.q_mse[k],
        quantile_neg_acc: s.q_neg_acc[k],
        score: s.sum(k),
    })
}

pub fn write_pareto(path: &Path, space: &SearchSpace, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["trial_id".to_string(), "val_mse".into(), "val_acc".into()];
    header.extend(space.names().map(str::to_string));
    w.write_record(&header)?;
    let mut front = pareto_front(records);
    front.sort_by_key(|r| r.trial_id);
    for r in front {
        let o = r.objectives().unwrap();
        let mut row = vec![r.trial_id.to_string(), num(Some(-o.neg_mse)), num(Some(o.acc))];
        row.extend(space.names().map(|n| cell(r.config.get(n))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per trial: hyperparameters, then objectives and log views.
/// Unsuccessful trials report their partial objectives when available.
pub fn write_parallel_coords(path: &Path, space: &SearchSpace, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["trial_id".to_string(), "status".into(), "stopper".into(), "epochs_run".into()];
    header.extend(space.names().map(str::to_string));
    header.extend(
        ["neg_mse", "acc", "val_mse", "log10_val_mse", "one_minus_acc", "log10_one_minus_acc"].map(String::from),
    );
    w.write_record(&header)?;
    for r in records {
        let objs = match &r.outcome {
            oceanhpo_core::Outcome::Success { objectives } => Some(*objectives),
            oceanhpo_core::Outcome::Failed { partial, .. } => *partial,
        };
        let mut row = vec![r.trial_id.to_string(), status(r).into(), r.stopper.as_str().into(), r.epochs_run.to_string()];
        row.extend(space.names().map(|n| cell(r.config.get(n))));
        let mse = objs.map(|o| -o.neg_mse);
        let oma = objs.map(|o| 1.0 - o.acc);
        row.extend([
            num(objs.map(|o| o.neg_mse)),
            num(objs.map(|o| o.acc)),
            num(mse),
            num(mse.map(f64::log10)),
            num(oma),
            num(oma.map(f64::log10)),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scatter(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let s = Scores::new(records);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["trial_id", "val_mse", "neg_acc", "quantile_mse", "quantile_neg_acc", "quantile_sum"])?;
    for k in 0..s.trials.len() {
        w.write_record([
            records[s.trials[k]].trial_id.to_string(),
            num(Some(s.mse[k])),
            num(Some(s.neg_acc[k])),
            num(Some(s.q_mse[k])),
            num(Some(s.q_neg_acc[k])),
            num(Some(s.sum(k))),
        ])?;
    }
    w.flush()?;
    Ok(())
}
