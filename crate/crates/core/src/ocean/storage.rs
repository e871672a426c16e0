//! Ensemble files: a JSON sidecar plus a little-endian `f32` blob laid out
//! sim-major, then `(T, H, W, C)`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::gen::{GenConfig, SimulationEnsemble, CHANNELS, CHANNEL_NAMES};
use crate::error::{Error, Result};

pub const FORMAT: &str = "oceanhpo-ensemble-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub shape: [usize; 5],
    pub layout: String,
    pub dtype: String,
    pub channels: Vec<String>,
    pub kappas: Vec<f64>,
    /// One string of `0`/`1` per grid row.
    pub mask: Vec<String>,
    pub seed: u64,
    pub gen: GenConfig,
    /// Blob file name, relative to the sidecar.
    pub blob: String,
}

pub fn blob_path(sidecar: &Path) -> PathBuf {
    sidecar.with_extension("bin")
}

pub fn save_ensemble(ens: &SimulationEnsemble, sidecar_path: &Path) -> Result<()> {
    let n = ens.grid();
    let blob = blob_path(sidecar_path);
    let sidecar = Sidecar {
        format: FORMAT.into(),
        shape: ens.shape(),
        layout: "sim,t,y,x,channel".into(),
        dtype: "float32-le".into(),
        channels: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
        kappas: ens.kappas.clone(),
        mask: ens.mask.chunks(n).map(|row| row.iter().map(|&m| if m { '1' } else { '0' }).collect()).collect(),
        seed: ens.gen.seed,
        gen: ens.gen.clone(),
        blob: blob.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string(),
    };
    let bytes: Vec<u8> = ens.states.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_atomic(&blob, &bytes)?;
    write_atomic(sidecar_path, serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
    Ok(())
}

pub fn load_ensemble(sidecar_path: &Path) -> Result<SimulationEnsemble> {
    let text = fs::read_to_string(sidecar_path)
        .map_err(|e| Error::Data(format!("cannot read sidecar {}: {e}", sidecar_path.display())))?;
    let sc: Sidecar =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("corrupt sidecar {}: {e}", sidecar_path.display())))?;
    if sc.format != FORMAT {
        return Err(Error::Data(format!("unsupported format `{}`", sc.format)));
    }
    let [s, t, h, w, c] = sc.shape;
    if c != CHANNELS || h != w || h != sc.gen.grid || t != sc.gen.timesteps_out || s != sc.kappas.len() {
        return Err(Error::Data(format!("sidecar shape {:?} inconsistent with its metadata", sc.shape)));
    }
    if sc.mask.len() != h || sc.mask.iter().any(|r| r.len() != w || r.chars().any(|ch| ch != '0' && ch != '1')) {
        return Err(Error::Data("sidecar mask malformed".into()));
    }
    let blob_file = sidecar_path.parent().unwrap_or(Path::new(".")).join(&sc.blob);
    let bytes = fs::read(&blob_file).map_err(|e| Error::Data(format!("cannot read blob {}: {e}", blob_file.display())))?;
    let expected = s * t * h * w * c * 4;
    if bytes.len() != expected {
        return Err(Error::Data(format!(
            "blob length mismatch: {} bytes, shape {:?} needs {expected}",
            bytes.len(),
            sc.shape
        )));
    }
    let states = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    let mask = sc.mask.iter().flat_map(|r| r.chars().map(|ch| ch == '1')).collect();
    Ok(SimulationEnsemble { gen: sc.gen, kappas: sc.kappas, mask, states })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or_default()
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
