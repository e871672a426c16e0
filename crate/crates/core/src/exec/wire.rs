//! Length-prefixed JSON frames: a 4-byte little-endian payload length
//! followed by UTF-8 JSON.

use std::io::{ErrorKind, Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::evaluator::{EvaluatorSpec, Job};
use crate::error::{Error, Result};
use crate::trial::TrialRecord;

const MAX_FRAME: usize = 64 << 20;

/// Manager to worker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JobMessage {
    Init { evaluator: EvaluatorSpec },
    Job(Job),
}

/// Worker to manager.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultMessage {
    pub trial_id: u64,
    pub record: TrialRecord,
}

pub fn write_frame<W: Write, T: Serialize>(w: &mut W, msg: &T) -> Result<()> {
    let body = serde_json::to_vec(msg)?;
    if body.len() > MAX_FRAME {
        return Err(Error::Worker(format!("frame of {} bytes exceeds the limit", body.len())));
    }
    w.write_all(&(body.len() as u32).to_le_bytes())?;
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

/// `Ok(None)` on a clean end of stream before any byte of a new frame.
pub fn read_frame<R: Read, T: DeserializeOwned>(r: &mut R) -> Result<Option<T>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::Worker("stream ended inside a frame header".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let n = u32::from_le_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(Error::Worker(format!("frame of {n} bytes exceeds the limit")));
    }
    let mut body = vec![0u8; n];
    r.read_exact(&mut body).map_err(|e| Error::Worker(format!("truncated frame: {e}")))?;
    Ok(Some(serde_json::from_slice(&body)?))
}
