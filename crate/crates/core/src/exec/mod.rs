//! Asynchronous manager/worker execution of the search.

pub mod evaluator;
pub mod log;
pub mod manager;
pub mod wire;
pub mod worker;

pub use evaluator::{Evaluator, EvaluatorSpec, Job};
pub use log::{read_log, LogHeader, LogLine, ResultsLog};
pub use manager::{resume, run_search, trial_seed, SearchRun, SearchSummary};
pub use worker::{serve, WorkerKind, WorkerPool};
