//! Input/output pairs, simulation-level splits, and normalization.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::gen::{SimulationEnsemble, CHANNELS};
use crate::error::{Error, Result};
use crate::fno::Tensor4;
use crate::seed;

pub const STATE_CHANNELS: usize = 4;
pub const DEFAULT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];
/// Channels whose training std falls below this are left unscaled.
const MIN_STD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Val,
    Test,
}

/// Simulation indices per subset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn sims(&self, subset: Subset) -> &[usize] {
        match subset {
            Subset::Train => &self.train,
            Subset::Val => &self.val,
            Subset::Test => &self.test,
        }
    }
}

/// Shuffles simulation indices and cuts them into train/val/test blocks;
/// validation and test sizes are floored, the remainder goes to training.
pub fn split_sims(n_sims: usize, ratios: [f64; 3], seed_value: u64) -> Result<Split> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Data(format!("split ratios {ratios:?} must be positive and sum to 1")));
    }
    let n_val = (n_sims as f64 * ratios[1]).floor() as usize;
    let n_test = (n_sims as f64 * ratios[2]).floor() as usize;
    let n_train = n_sims.saturating_sub(n_val + n_test);
    for (name, n) in [("train", n_train), ("val", n_val), ("test", n_test)] {
        if n == 0 {
            return Err(Error::Data(format!("{n_sims} simulations leave the {name} split empty")));
        }
    }
    let mut idx: Vec<usize> = (0..n_sims).collect();
    idx.shuffle(&mut seed::rng(seed::derive_tagged(seed_value, "split", 0)));
    Ok(Split {
        train: idx[..n_train].to_vec(),
        val: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    })
}

/// `(sim, t)` identifies the pair `frame t -> frame t + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PairIndex {
    pub sim: usize,
    pub t: usize,
}

/// Every consecutive-frame pair of every simulation, in simulation order.
pub fn make_pairs(n_sims: usize, timesteps: usize) -> Result<Vec<PairIndex>> {
    if timesteps < 2 {
        return Err(Error::Data(format!("need at least 2 frames per simulation, got {timesteps}")));
    }
    Ok((0..n_sims).flat_map(|sim| (0..timesteps - 1).map(move |t| PairIndex { sim, t })).collect())
}

/// Per-channel z-score for the state channels over basin pixels; the
/// diffusivity channel is mapped affinely from its range onto [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: [f64; STATE_CHANNELS],
    pub std: [f64; STATE_CHANNELS],
    /// Channels with (near) zero spread, passed through unscaled.
    pub passthrough: [bool; STATE_CHANNELS],
    pub kappa_range: [f64; 2],
}

impl Normalizer {
    /// Statistics over all frames of `sims`.
    pub fn fit(ens: &SimulationEnsemble, sims: &[usize]) -> Self {
        let mut sum = [0.0; STATE_CHANNELS];
        let mut sq = [0.0; STATE_CHANNELS];
        let mut count = 0usize;
        for &s in sims {
            for t in 0..ens.timesteps() {
                let f = ens.frame(s, t);
                for (p, &wet) in ens.mask.iter().enumerate() {
                    if !wet {
                        continue;
                    }
                    count += 1;
                    for c in 0..STATE_CHANNELS {
                        let v = f[p * CHANNELS + c] as f64;
                        sum[c] += v;
                        sq[c] += v * v;
                    }
                }
            }
        }
        let n = count.max(1) as f64;
        let mut mean = [0.0; STATE_CHANNELS];
        let mut std = [1.0; STATE_CHANNELS];
        let mut passthrough = [false; STATE_CHANNELS];
        for c in 0..STATE_CHANNELS {
            let m = sum[c] / n;
            let var = (sq[c] / n - m * m).max(0.0);
            if var.sqrt() < MIN_STD * m.abs().max(1.0) {
                passthrough[c] = true;
                log::warn!("channel {c} has zero spread; left unscaled");
            } else {
                mean[c] = m;
                std[c] = var.sqrt();
            }
        }
        Normalizer { mean, std, passthrough, kappa_range: ens.gen.kappa_range }
    }

    fn scale(&self, c: usize) -> (f64, f64) {
        if c < STATE_CHANNELS {
            (self.mean[c], self.std[c])
        } else {
            (self.kappa_range[0], self.kappa_range[1] - self.kappa_range[0])
        }
    }

    /// Channel-last `f32` frame to channel-first normalized `f64` with all
    /// five channels; land stays 0.
    pub fn apply_frame(&self, frame: &[f32], mask: &[bool]) -> Vec<f64> {
        let hw = mask.len();
        let mut out = vec![0.0; CHANNELS * hw];
        for c in 0..CHANNELS {
            let (m, s) = self.scale(c);
            for (p, &wet) in mask.iter().enumerate() {
                if wet {
                    out[c * hw + p] = (frame[p * CHANNELS + c] as f64 - m) / s;
                }
            }
        }
        out
    }

    /// Normalizes channel-first data holding the first `channels` channels.
    pub fn apply(&self, data: &[f64], channels: usize, mask: &[bool]) -> Vec<f64> {
        self.map(data, channels, mask, |v, m, s| (v - m) / s)
    }

    /// Inverse of [`Normalizer::apply`].
    pub fn invert(&self, data: &[f64], channels: usize, mask: &[bool]) -> Vec<f64> {
        self.map(data, channels, mask, |v, m, s| v * s + m)
    }

    fn map(&self, data: &[f64], channels: usize, mask: &[bool], f: impl Fn(f64, f64, f64) -> f64) -> Vec<f64> {
        let hw = mask.len();
        assert_eq!(data.len(), channels * hw);
        let mut out = vec![0.0; data.len()];
        for c in 0..channels {
            let (m, s) = self.scale(c);
            for (p, &wet) in mask.iter().enumerate() {
                if wet {
                    out[c * hw + p] = f(data[c * hw + p], m, s);
                }
            }
        }
        out
    }
}

/// Normalized frames of every simulation plus split, statistics, and
/// the training climatology.
#[derive(Clone, Debug)]
pub struct PairedDataset {
    grid: usize,
    timesteps: usize,
    mask: Vec<bool>,
    mask_weights: Vec<f64>,
    kappas: Vec<f64>,
    /// Per simulation: `T × 5 × H × W` normalized.
    frames: Vec<Vec<f64>>,
    split: Split,
    split_seed: u64,
    normalizer: Normalizer,
    climatology: Vec<f64>,
}

impl PairedDataset {
    pub fn new(ens: &SimulationEnsemble, ratios: [f64; 3], split_seed: u64) -> Result<Self> {
        make_pairs(ens.n_sims(), ens.timesteps())?;
        let split = split_sims(ens.n_sims(), ratios, split_seed)?;
        let normalizer = Normalizer::fit(ens, &split.train);
        let frames: Vec<Vec<f64>> = (0..ens.n_sims())
            .map(|s| (0..ens.timesteps()).flat_map(|t| normalizer.apply_frame(ens.frame(s, t), &ens.mask)).collect())
            .collect();
        let hw = ens.grid() * ens.grid();
        let frame_len = CHANNELS * hw;
        let mut climatology = vec![0.0; STATE_CHANNELS * hw];
        let mut count = 0usize;
        for &s in &split.train {
            for t in 1..ens.timesteps() {
                let f = &frames[s][t * frame_len..t * frame_len + STATE_CHANNELS * hw];
                climatology.iter_mut().zip(f).for_each(|(c, v)| *c += v);
                count += 1;
            }
        }
        climatology.iter_mut().for_each(|c| *c /= count as f64);
        Ok(PairedDataset {
            grid: ens.grid(),
            timesteps: ens.timesteps(),
            mask_weights: ens.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
            mask: ens.mask.clone(),
            kappas: ens.kappas.clone(),
            frames,
            split,
            split_seed,
            normalizer,
            climatology,
        })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Mask as 1.0 (basin) / 0.0 (land).
    pub fn mask_weights(&self) -> &[f64] {
        &self.mask_weights
    }

    pub fn kappas(&self) -> &[f64] {
        &self.kappas
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    /// `4 × H × W` mean of normalized training targets.
    pub fn climatology(&self) -> &[f64] {
        &self.climatology
    }

    pub fn n_sims(&self) -> usize {
        self.frames.len()
    }

    fn frame_len(&self) -> usize {
        CHANNELS * self.grid * self.grid
    }

    /// Normalized `5 × H × W` frame.
    pub fn frame(&self, sim: usize, t: usize) -> &[f64] {
        let len = self.frame_len();
        &self.frames[sim][t * len..(t + 1) * len]
    }

    pub fn pairs(&self, subset: Subset) -> Vec<PairIndex> {
        self.split
            .sims(subset)
            .iter()
            .flat_map(|&sim| (0..self.timesteps - 1).map(move |t| PairIndex { sim, t }))
            .collect()
    }

    pub fn n_pairs(&self, subset: Subset) -> usize {
        self.split.sims(subset).len() * (self.timesteps - 1)
    }

    pub fn input(&self, p: PairIndex) -> &[f64] {
        self.frame(p.sim, p.t)
    }

    /// State channels of the next frame.
    pub fn target(&self, p: PairIndex) -> &[f64] {
        let hw = self.grid * self.grid;
        &self.frame(p.sim, p.t + 1)[..STATE_CHANNELS * hw]
    }

    pub fn batch(&self, pairs: &[PairIndex]) -> (Tensor4, Tensor4) {
        let g = self.grid;
        let inputs: Vec<&[f64]> = pairs.iter().map(|&p| self.input(p)).collect();
        let targets: Vec<&[f64]> = pairs.iter().map(|&p| self.target(p)).collect();
        (
            Tensor4::stack(&inputs, CHANNELS, g, g).expect("consistent frame sizes"),
            Tensor4::stack(&targets, STATE_CHANNELS, g, g).expect("consistent frame sizes"),
        )
    }
}
