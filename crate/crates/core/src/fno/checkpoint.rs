//! Parameter checkpoints: `u64` LE header length, a JSON header, then every
//! tensor as little-endian `f64` in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{param_specs, FnoConfig, ParamSet, ParamTensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub complex: bool,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: FnoConfig,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
    /// Caller-defined metadata (normalization statistics, training settings).
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: FnoConfig,
    pub seed: u64,
    pub params: ParamSet,
    pub extra: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            config: self.config.clone(),
            seed: self.seed,
            tensors: self
                .params
                .tensors
                .iter()
                .map(|t| TensorEntry { name: t.name.clone(), shape: t.shape.clone(), complex: t.complex, len: t.data.len() })
                .collect(),
            extra: self.extra.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(8 + json.len() + 8 * self.params.len());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.params.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let len_bytes: [u8; 8] = bytes.get(..8).ok_or_else(|| bad("truncated header length"))?.try_into().unwrap();
        let hlen = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| bad("header too large"))?;
        let json = bytes.get(8..8usize.saturating_add(hlen)).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(json)?;
        let mut blob = &bytes[8 + hlen..];
        let expected: usize = header.tensors.iter().map(|t| t.len).sum();
        if blob.len() != expected * 8 {
            return Err(bad(&format!("blob holds {} bytes, header describes {}", blob.len(), expected * 8)));
        }
        let specs = param_specs(&header.config);
        let consistent = specs.len() == header.tensors.len()
            && specs.iter().zip(&header.tensors).all(|(s, t)| {
                s.name == t.name && s.shape == t.shape && s.complex == t.complex
                    && t.len == t.shape.iter().product::<usize>() * if t.complex { 2 } else { 1 }
            });
        if !consistent {
            return Err(bad("tensor table does not match the stored configuration"));
        }
        let tensors = header
            .tensors
            .into_iter()
            .map(|e| {
                let (head, rest) = blob.split_at(e.len * 8);
                blob = rest;
                let data = head.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                ParamTensor { name: e.name, shape: e.shape, complex: e.complex, data }
            })
            .collect();
        Ok(Checkpoint { config: header.config, seed: header.seed, params: ParamSet { tensors }, extra: header.extra })
    }

    /// Writes to a sibling temporary file, then renames.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes()?)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
