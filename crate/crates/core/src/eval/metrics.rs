//! Per-variable forecast metrics and quantile ranks.

use serde::{Deserialize, Serialize};

use crate::fno::Tensor4;

pub const LOG_FLOOR: f64 = -15.0;
pub const VARIABLES: [&str; 4] = ["salinity", "temperature", "u", "v"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableMetrics {
    pub mse: f64,
    pub rse: f64,
    pub log_rse: f64,
    pub acc: f64,
    pub log_one_minus_acc: f64,
    /// A zero denominator made RSE or ACC undefined; RSE is then reported
    /// as 1 and ACC as 0.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub variables: Vec<VariableMetrics>,
    /// Pooled over every channel.
    pub mse: f64,
    pub acc: f64,
}

/// `log10(x)` floored at [`LOG_FLOOR`]; non-positive inputs hit the floor.
pub fn floored_log10(x: f64) -> f64 {
    if x > 0.0 {
        x.log10().max(LOG_FLOOR)
    } else {
        LOG_FLOOR
    }
}

fn log_one_minus(acc: f64) -> f64 {
    floored_log10(1.0 - acc.min(1.0 - 1e-15))
}

/// Running sums so large evaluation sets can be streamed in batches.
#[derive(Clone, Debug)]
pub struct MetricAccumulator {
    climatology: Vec<f64>,
    mask: Vec<bool>,
    channels: usize,
    sq_err: Vec<f64>,
    sq_clim: Vec<f64>,
    sab: Vec<f64>,
    saa: Vec<f64>,
    sbb: Vec<f64>,
    count: Vec<f64>,
}

impl MetricAccumulator {
    pub fn new(climatology: &[f64], mask: &[bool]) -> Self {
        let channels = climatology.len() / mask.len();
        MetricAccumulator {
            climatology: climatology.to_vec(),
            mask: mask.to_vec(),
            channels,
            sq_err: vec![0.0; channels],
            sq_clim: vec![0.0; channels],
            sab: vec![0.0; channels],
            saa: vec![0.0; channels],
            sbb: vec![0.0; channels],
            count: vec![0.0; channels],
        }
    }

    /// Adds one sample's `C × H × W` prediction and target.
    pub fn add_sample(&mut self, pred: &[f64], target: &[f64]) {
        let hw = self.mask.len();
        for c in 0..self.channels {
            for (p, &wet) in self.mask.iter().enumerate() {
                if !wet {
                    continue;
                }
                let i = c * hw + p;
                let a = pred[i] - self.climatology[i];
                let b = target[i] - self.climatology[i];
                self.sq_err[c] += (target[i] - pred[i]).powi(2);
                self.sq_clim[c] += b * b;
                self.sab[c] += a * b;
                self.saa[c] += a * a;
                self.sbb[c] += b * b;
                self.count[c] += 1.0;
            }
        }
    }

    pub fn add(&mut self, pred: &Tensor4, target: &Tensor4) {
        assert_eq!(pred.shape(), target.shape());
        for b in 0..pred.batch() {
            self.add_sample(pred.sample(b), target.sample(b));
        }
    }

    pub fn finish(&self) -> Metrics {
        let variables = (0..self.channels)
            .map(|c| {
                let mse = if self.count[c] > 0.0 { self.sq_err[c] / self.count[c] } else { 0.0 };
                let mut degenerate = false;
                let rse = if self.sq_clim[c] > 0.0 {
                    self.sq_err[c] / self.sq_clim[c]
                } else {
                    degenerate = true;
                    1.0
                };
                let prod = self.saa[c] * self.sbb[c];
                let acc = if prod > 0.0 {
                    self.sab[c] / prod.sqrt()
                } else {
                    degenerate = true;
                    0.0
                };
                VariableMetrics {
                    mse,
                    rse,
                    log_rse: floored_log10(rse),
                    acc,
                    log_one_minus_acc: log_one_minus(acc),
                    degenerate,
                }
            })
            .collect();
        let total = |v: &[f64]| v.iter().sum::<f64>();
        let n = total(&self.count);
        let prod = total(&self.saa) * total(&self.sbb);
        Metrics {
            variables,
            mse: if n > 0.0 { total(&self.sq_err) / n } else { 0.0 },
            acc: if prod > 0.0 { total(&self.sab) / prod.sqrt() } else { 0.0 },
        }
    }
}

/// Per-variable metrics over every sample and basin pixel.
pub fn metrics(pred: &Tensor4, target: &Tensor4, climatology: &[f64], mask: &[bool]) -> Metrics {
    let mut acc = MetricAccumulator::new(climatology, mask);
    acc.add(pred, target);
    acc.finish()
}

/// Average rank over `n - 1`: values map into [0, 1], ties share the mean
/// of their ranks, and a single value maps to 0.
pub fn quantile_transform(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n <= 1 {
        return vec![0.0; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 / (n - 1) as f64;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}
