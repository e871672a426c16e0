//! The asynchronous search loop: one optimizer, many workers, one log.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::evaluator::{EvaluatorSpec, Job};
use super::log::{read_log, LogHeader, ResultsLog, LOG_FORMAT};
use super::worker::{WorkerKind, WorkerPool};
use crate::error::{Error, Result};
use crate::optimizer::{Optimizer, OptimizerSettings};
use crate::seed;
use crate::space::SearchSpace;
use crate::trial::{unix_now, TrialRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchRun {
    pub space: SearchSpace,
    pub optimizer: OptimizerSettings,
    pub evaluator: EvaluatorSpec,
    pub workers: usize,
    pub budget: usize,
    pub seed: u64,
    pub log_path: PathBuf,
    /// Stop (abandoning in-flight trials) once this many trials are logged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_after: Option<usize>,
}

impl SearchRun {
    pub fn validate(&self) -> Result<()> {
        if self.workers < 1 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.budget < self.workers {
            return Err(Error::Config(format!("budget {} is smaller than workers {}", self.budget, self.workers)));
        }
        Ok(())
    }

    pub fn header(&self) -> LogHeader {
        LogHeader {
            format: LOG_FORMAT.into(),
            space: self.space.clone(),
            space_hash: self.space.hash(),
            optimizer: self.optimizer.clone(),
            evaluator: self.evaluator.clone(),
            workers: self.workers,
            budget: self.budget,
            seed: self.seed,
            code_version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    /// Rebuilds the run described by a log header.
    pub fn from_header(header: &LogHeader, log_path: &Path) -> Self {
        SearchRun {
            space: header.space.clone(),
            optimizer: header.optimizer.clone(),
            evaluator: header.evaluator.clone(),
            workers: header.workers,
            budget: header.budget,
            seed: header.seed,
            log_path: log_path.to_path_buf(),
            stop_after: None,
        }
    }
}

/// Per-trial training seed, independent of scheduling.
pub fn trial_seed(run_seed: u64, trial_id: u64) -> u64 {
    seed::derive_tagged(run_seed, "trial", trial_id)
}

#[derive(Clone, Debug)]
pub struct SearchSummary {
    /// Every logged record, in trial order.
    pub records: Vec<TrialRecord>,
    /// Records that were already in the log before this invocation.
    pub replayed: usize,
    /// The run stopped early because of `stop_after`.
    pub interrupted: bool,
}

/// Starts a new search and logs to `run.log_path`.
pub fn run_search(run: &SearchRun, kind: &WorkerKind) -> Result<SearchSummary> {
    run.validate()?;
    let log = ResultsLog::create(&run.log_path, &run.header())?;
    drive(run, kind, log, Vec::new())
}

/// Continues the search recorded in `log_path`. When `expected` is given
/// its space and seed must match the log header.
pub fn resume(log_path: &Path, kind: &WorkerKind, expected: Option<&SearchRun>) -> Result<SearchSummary> {
    let (log, header, records) = ResultsLog::open(log_path)?;
    let mut run = SearchRun::from_header(&header, log_path);
    if let Some(exp) = expected {
        if exp.space.hash() != header.space_hash {
            return Err(Error::Resume(format!(
                "search space hash {} does not match the log's {}",
                exp.space.hash(),
                header.space_hash
            )));
        }
        if exp.seed != header.seed || exp.budget != header.budget {
            return Err(Error::Resume("seed or budget differ from the log header".into()));
        }
        if exp.evaluator != header.evaluator {
            return Err(Error::Resume("evaluator settings differ from the log header".into()));
        }
        run.workers = exp.workers;
        run.stop_after = exp.stop_after;
    }
    if header.space.hash() != header.space_hash {
        return Err(Error::Resume("log header space does not match its recorded hash".into()));
    }
    drive(&run, kind, log, records)
}

fn drive(run: &SearchRun, kind: &WorkerKind, mut log: ResultsLog, existing: Vec<TrialRecord>) -> Result<SearchSummary> {
    let mut optimizer = Optimizer::new(run.space.clone(), run.optimizer.clone())?;
    let replayed = existing.len();
    for r in &existing {
        optimizer.replay(r.clone())?;
    }
    let mut records = existing;
    if records.len() >= run.budget {
        return Ok(SearchSummary { records, replayed, interrupted: false });
    }
    if run.stop_after.is_some_and(|n| records.len() >= n) {
        return Ok(SearchSummary { records, replayed, interrupted: true });
    }
    optimizer.set_proposals_issued(records.len() as u64);
    let pool = WorkerPool::start(kind, run.workers, &run.evaluator)?;
    let mut next_id = records.len() as u64;
    let budget = run.budget as u64;
    let mut submitted: BTreeMap<u64, f64> = BTreeMap::new();
    let mut finished: BTreeMap<u64, TrialRecord> = BTreeMap::new();

    let dispatch = |worker: usize, id: u64, config, submitted: &mut BTreeMap<u64, f64>| {
        submitted.insert(id, unix_now());
        pool.submit(worker, Job { trial_id: id, config, seed: trial_seed(run.seed, id) })
    };

    let first = (run.workers as u64).min(budget - next_id) as usize;
    for (w, config) in optimizer.ask(first)?.into_iter().enumerate() {
        dispatch(w, next_id, config, &mut submitted)?;
        next_id += 1;
    }

    while (records.len() as u64) < budget {
        let (worker, mut record) = pool.recv()?;
        let id = record.trial_id;
        let Some(submit) = submitted.remove(&id) else {
            return Err(Error::Worker(format!("unexpected result for trial {id}")));
        };
        record.timestamps.submit = submit;
        record.imputed = optimizer.tell(record.clone())?;
        log::info!(
            "trial {id} {} after {} epochs",
            if record.is_success() { "succeeded" } else { "failed" },
            record.epochs_run
        );
        finished.insert(id, record);
        while let Some(r) = finished.remove(&(records.len() as u64)) {
            log.append(&r)?;
            records.push(r);
            if run.stop_after.is_some_and(|n| records.len() >= n) {
                pool.abort();
                return Ok(SearchSummary { records, replayed, interrupted: true });
            }
        }
        if next_id < budget {
            let config = optimizer.ask(1)?.remove(0);
            dispatch(worker, next_id, config, &mut submitted)?;
            next_id += 1;
        }
    }
    pool.shutdown();
    Ok(SearchSummary { records, replayed, interrupted: false })
}

/// Records of a finished or partial log.
pub fn load_records(path: &Path) -> Result<(LogHeader, Vec<TrialRecord>)> {
    read_log(path)
}
