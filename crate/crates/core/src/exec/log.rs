//! Append-only JSON Lines results log: one header line, then one line per
//! trial in increasing `trial_id` order.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::evaluator::EvaluatorSpec;
use crate::error::{Error, Result};
use crate::optimizer::OptimizerSettings;
use crate::space::SearchSpace;
use crate::trial::TrialRecord;

pub const LOG_FORMAT: &str = "oceanhpo-results-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub space: SearchSpace,
    pub space_hash: String,
    pub optimizer: OptimizerSettings,
    pub evaluator: EvaluatorSpec,
    pub workers: usize,
    pub budget: usize,
    pub seed: u64,
    pub code_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Header(LogHeader),
    Trial { record: TrialRecord },
}

pub struct ResultsLog {
    file: File,
    path: PathBuf,
    count: usize,
}

impl ResultsLog {
    /// Starts a new log; refuses to overwrite a non-empty file.
    pub fn create(path: &Path, header: &LogHeader) -> Result<Self> {
        if fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false) {
            return Err(Error::Log(format!("{} already exists; resume it or choose another path", path.display())));
        }
        let mut file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        let mut line = serde_json::to_string(&LogLine::Header(header.clone()))?;
        line.push('\n');
        file.write_all(line.as_bytes())?;
        file.sync_data()?;
        Ok(ResultsLog { file, path: path.to_path_buf(), count: 0 })
    }

    /// Opens an existing log for appending. A partial trailing line (from
    /// an interrupted write) is cut off first.
    pub fn open(path: &Path) -> Result<(Self, LogHeader, Vec<TrialRecord>)> {
        let (header, records, valid_len) = parse(path)?;
        let mut file = OpenOptions::new().read(true).write(true).open(path)?;
        if file.metadata()?.len() != valid_len {
            log::warn!("truncating partial trailing line of {}", path.display());
            file.set_len(valid_len)?;
        }
        file.seek(SeekFrom::End(0))?;
        let count = records.len();
        Ok((ResultsLog { file, path: path.to_path_buf(), count }, header, records))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Appends one record as a single write.
    pub fn append(&mut self, record: &TrialRecord) -> Result<()> {
        if record.trial_id != self.count as u64 {
            return Err(Error::Log(format!("expected trial {} next, got {}", self.count, record.trial_id)));
        }
        let mut line = serde_json::to_string(&LogLine::Trial { record: record.clone() })?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        self.count += 1;
        Ok(())
    }
}

/// Header and records of a log, ignoring a partial trailing line.
pub fn read_log(path: &Path) -> Result<(LogHeader, Vec<TrialRecord>)> {
    let (h, r, _) = parse(path)?;
    Ok((h, r))
}

fn parse(path: &Path) -> Result<(LogHeader, Vec<TrialRecord>, u64)> {
    let file = File::open(path).map_err(|e| Error::Log(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = BufReader::new(file);
    let mut header = None;
    let mut records = Vec::new();
    let mut valid = 0u64;
    let mut buf = String::new();
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf)?;
        if n == 0 {
            break;
        }
        if !buf.ends_with('\n') {
            break;
        }
        let line: LogLine = serde_json::from_str(buf.trim_end())
            .map_err(|e| Error::Log(format!("{}: malformed line after byte {valid}: {e}", path.display())))?;
        match line {
            LogLine::Header(h) if header.is_none() => header = Some(h),
            LogLine::Header(_) => return Err(Error::Log("second header line".into())),
            LogLine::Trial { record } => {
                if header.is_none() {
                    return Err(Error::Log("trial line before the header".into()));
                }
                if record.trial_id != records.len() as u64 {
                    return Err(Error::Log(format!(
                        "trial ids not contiguous: expected {}, found {}",
                        records.len(),
                        record.trial_id
                    )));
                }
                records.push(record);
            }
        }
        valid += n as u64;
    }
    let header = header.ok_or_else(|| Error::Log(format!("{} has no header line", path.display())))?;
    if header.format != LOG_FORMAT {
        return Err(Error::Log(format!("unsupported log format `{}`", header.format)));
    }
    Ok((header, records, valid))
}
