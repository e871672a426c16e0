//! Worker pools (in-process threads or child processes) and the child
//! side of the process protocol.

use std::io::{BufReader, BufWriter, Read, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use super::evaluator::{Evaluator, EvaluatorSpec, Job};
use super::wire::{read_frame, write_frame, JobMessage, ResultMessage};
use crate::error::{Error, Result};
use crate::trial::{unix_now, Timestamps, TrialRecord};

#[derive(Clone, Debug, PartialEq)]
pub enum WorkerKind {
    Threads,
    /// `program args...` must speak the frame protocol on stdin/stdout.
    Processes { program: PathBuf, args: Vec<String> },
}

type Completion = (usize, TrialRecord);

pub struct WorkerPool {
    jobs: Vec<Sender<Job>>,
    results: Receiver<Completion>,
    children: Vec<Arc<Mutex<Option<Child>>>>,
    handles: Vec<JoinHandle<()>>,
}

fn synthesized_failure(job: &Job, reason: String) -> TrialRecord {
    let mut r = TrialRecord::failed(job.trial_id, job.config.clone(), reason);
    r.seed = job.seed;
    let now = unix_now();
    r.timestamps = Timestamps { submit: now, start: now, finish: now };
    r
}

impl WorkerPool {
    pub fn start(kind: &WorkerKind, workers: usize, spec: &EvaluatorSpec) -> Result<Self> {
        if workers == 0 {
            return Err(Error::Config("need at least one worker".into()));
        }
        let (done_tx, results) = channel();
        let mut pool = WorkerPool { jobs: Vec::new(), results, children: Vec::new(), handles: Vec::new() };
        match kind {
            WorkerKind::Threads => {
                let evaluator = spec.build()?;
                for w in 0..workers {
                    let (tx, rx) = channel::<Job>();
                    let ev = Arc::clone(&evaluator);
                    let done = done_tx.clone();
                    pool.jobs.push(tx);
                    pool.handles.push(thread::spawn(move || thread_worker(w, ev, rx, done)));
                }
            }
            WorkerKind::Processes { program, args } => {
                for w in 0..workers {
                    let (tx, rx) = channel::<Job>();
                    let slot = Arc::new(Mutex::new(None));
                    let proc = ProcessWorker {
                        index: w,
                        program: program.clone(),
                        args: args.clone(),
                        spec: spec.clone(),
                        slot: Arc::clone(&slot),
                        io: None,
                    };
                    let done = done_tx.clone();
                    pool.jobs.push(tx);
                    pool.children.push(slot);
                    pool.handles.push(thread::spawn(move || proc.run(rx, done)));
                }
            }
        }
        Ok(pool)
    }

    pub fn size(&self) -> usize {
        self.jobs.len()
    }

    pub fn submit(&self, worker: usize, job: Job) -> Result<()> {
        self.jobs[worker].send(job).map_err(|_| Error::Worker(format!("worker {worker} has shut down")))
    }

    /// Blocks until some worker finishes; returns the worker index.
    pub fn recv(&self) -> Result<Completion> {
        self.results.recv().map_err(|_| Error::Worker("all workers exited".into()))
    }

    /// Lets workers finish their current job and exit.
    pub fn shutdown(mut self) {
        self.jobs.clear();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }

    /// Kills child processes immediately; thread workers are detached.
    pub fn abort(mut self) {
        self.jobs.clear();
        for slot in &self.children {
            if let Some(child) = slot.lock().unwrap().as_mut() {
                let _ = child.kill();
            }
        }
        if !self.children.is_empty() {
            for h in self.handles.drain(..) {
                let _ = h.join();
            }
        }
    }
}

fn thread_worker(index: usize, ev: Arc<dyn Evaluator>, jobs: Receiver<Job>, done: Sender<Completion>) {
    while let Ok(job) = jobs.recv() {
        let record = catch_unwind(AssertUnwindSafe(|| ev.evaluate(&job)))
            .unwrap_or_else(|_| synthesized_failure(&job, "worker panicked".into()));
        if done.send((index, record)).is_err() {
            break;
        }
    }
}

struct ProcessWorker {
    index: usize,
    program: PathBuf,
    args: Vec<String>,
    spec: EvaluatorSpec,
    slot: Arc<Mutex<Option<Child>>>,
    io: Option<(BufWriter<ChildStdin>, BufReader<ChildStdout>)>,
}

impl ProcessWorker {
    fn spawn(&mut self) -> Result<()> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Worker(format!("cannot start {}: {e}", self.program.display())))?;
        let mut stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        write_frame(&mut stdin, &JobMessage::Init { evaluator: self.spec.clone() })?;
        *self.slot.lock().unwrap() = Some(child);
        self.io = Some((stdin, stdout));
        Ok(())
    }

    fn reap(&mut self) {
        self.io = None;
        if let Some(mut child) = self.slot.lock().unwrap().take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }

    fn exchange(&mut self, job: &Job) -> Result<TrialRecord> {
        if self.io.is_none() {
            self.spawn()?;
        }
        let (stdin, stdout) = self.io.as_mut().expect("spawned");
        write_frame(stdin, &JobMessage::Job(job.clone()))?;
        match read_frame::<_, ResultMessage>(stdout)? {
            Some(msg) if msg.trial_id == job.trial_id => Ok(msg.record),
            Some(msg) => Err(Error::Worker(format!("answered trial {} for job {}", msg.trial_id, job.trial_id))),
            None => Err(Error::Worker("worker process exited".into())),
        }
    }

    fn run(mut self, jobs: Receiver<Job>, done: Sender<Completion>) {
        while let Ok(job) = jobs.recv() {
            let record = match self.exchange(&job) {
                Ok(r) => r,
                Err(e) => {
                    let status = self.slot.lock().unwrap().as_mut().and_then(|c| c.try_wait().ok().flatten());
                    self.reap();
                    let detail = status.map(|s| format!(" ({s})")).unwrap_or_default();
                    log::warn!("worker {} lost trial {}: {e}{detail}", self.index, job.trial_id);
                    synthesized_failure(&job, format!("worker died: {e}{detail}"))
                }
            };
            if done.send((self.index, record)).is_err() {
                break;
            }
        }
        self.reap_gracefully();
    }

    fn reap_gracefully(&mut self) {
        self.io = None; // closing stdin asks the child to exit
        if let Some(mut child) = self.slot.lock().unwrap().take() {
            let _ = child.wait();
        }
    }
}

/// Child side: reads an `Init` frame, then answers `Job` frames until the
/// input closes.
pub fn serve<R: Read, W: Write>(input: R, output: W) -> Result<()> {
    let mut input = BufReader::new(input);
    let mut output = BufWriter::new(output);
    let evaluator = match read_frame::<_, JobMessage>(&mut input)? {
        Some(JobMessage::Init { evaluator }) => evaluator.build()?,
        Some(JobMessage::Job(_)) => return Err(Error::Worker("job received before init".into())),
        None => return Ok(()),
    };
    while let Some(msg) = read_frame::<_, JobMessage>(&mut input)? {
        let JobMessage::Job(job) = msg else {
            return Err(Error::Worker("unexpected second init".into()));
        };
        let record = evaluator.evaluate(&job);
        write_frame(&mut output, &ResultMessage { trial_id: job.trial_id, record })?;
    }
    Ok(())
}
