//! First-order parameter updates.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::model::ParamSet;
use crate::error::{Error, Result};

pub const OPTIMIZER_NAMES: [&str; 6] = ["Adadelta", "Adagrad", "Adam", "AdamW", "RMSprop", "SGD"];

const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
const ADAM_EPS: f64 = 1e-8;
const RMSPROP_ALPHA: f64 = 0.99;
const RMSPROP_EPS: f64 = 1e-8;
const ADAGRAD_EPS: f64 = 1e-10;
const ADADELTA_RHO: f64 = 0.9;
const ADADELTA_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adadelta,
    Adagrad,
    Adam,
    AdamW,
    #[serde(rename = "RMSprop")]
    RmsProp,
    #[serde(rename = "SGD")]
    Sgd,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adadelta => "Adadelta",
            OptimizerKind::Adagrad => "Adagrad",
            OptimizerKind::Adam => "Adam",
            OptimizerKind::AdamW => "AdamW",
            OptimizerKind::RmsProp => "RMSprop",
            OptimizerKind::Sgd => "SGD",
        }
    }

    fn buffers(self) -> usize {
        match self {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adagrad | OptimizerKind::RmsProp => 1,
            OptimizerKind::Adadelta | OptimizerKind::Adam | OptimizerKind::AdamW => 2,
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "Adadelta" => OptimizerKind::Adadelta,
            "Adagrad" => OptimizerKind::Adagrad,
            "Adam" => OptimizerKind::Adam,
            "AdamW" => OptimizerKind::AdamW,
            "RMSprop" => OptimizerKind::RmsProp,
            "SGD" => OptimizerKind::Sgd,
            _ => return Err(Error::Config(format!("unknown optimizer `{s}`"))),
        })
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Optimizer hyperparameters plus per-parameter moment buffers.
///
/// Complex tensors are updated componentwise on their real and imaginary
/// parts.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub step: u64,
    buffers: Vec<Vec<Vec<f64>>>,
}

impl OptimState {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64, params: &ParamSet) -> Self {
        let buffers = (0..kind.buffers())
            .map(|_| params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect())
            .collect();
        OptimState { kind, lr, weight_decay, step: 0, buffers }
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        if !params.shapes_match(grads) {
            return Err(Error::Shape("gradient shapes do not match parameters".into()));
        }
        for (t, g) in params.tensors.iter().zip(&grads.tensors) {
            debug_assert_eq!(t.name, g.name);
            if g.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(g.name.clone()));
            }
        }
        self.step += 1;
        let (lr, wd) = (self.lr, self.weight_decay);
        let step = self.step as i32;
        for (ti, (p, g)) in params.tensors.iter_mut().zip(&grads.tensors).enumerate() {
            let p = &mut p.data;
            let g = &g.data;
            match self.kind {
                OptimizerKind::Sgd => {
                    for (pv, gv) in p.iter_mut().zip(g) {
                        *pv -= lr * (gv + wd * *pv);
                    }
                }
                OptimizerKind::Adagrad => {
                    let sum = &mut self.buffers[0][ti];
                    for ((pv, &gv), s) in p.iter_mut().zip(g).zip(sum.iter_mut()) {
                        let gv = gv + wd * *pv;
                        *s += gv * gv;
                        *pv -= lr * gv / (s.sqrt() + ADAGRAD_EPS);
                    }
                }
                OptimizerKind::RmsProp => {
                    let sq = &mut self.buffers[0][ti];
                    for ((pv, &gv), v) in p.iter_mut().zip(g).zip(sq.iter_mut()) {
                        let gv = gv + wd * *pv;
                        *v = RMSPROP_ALPHA * *v + (1.0 - RMSPROP_ALPHA) * gv * gv;
                        *pv -= lr * gv / (v.sqrt() + RMSPROP_EPS);
                    }
                }
                OptimizerKind::Adadelta => {
                    let (sq, acc) = two_buffers(&mut self.buffers, ti);
                    for (((pv, &gv), v), u) in p.iter_mut().zip(g).zip(sq.iter_mut()).zip(acc.iter_mut()) {
                        let gv = gv + wd * *pv;
                        *v = ADADELTA_RHO * *v + (1.0 - ADADELTA_RHO) * gv * gv;
                        let delta = (*u + ADADELTA_EPS).sqrt() / (*v + ADADELTA_EPS).sqrt() * gv;
                        *u = ADADELTA_RHO * *u + (1.0 - ADADELTA_RHO) * delta * delta;
                        *pv -= lr * delta;
                    }
                }
                OptimizerKind::Adam | OptimizerKind::AdamW => {
                    let decoupled = self.kind == OptimizerKind::AdamW;
                    let (b1, b2) = ADAM_BETAS;
                    let c1 = 1.0 - b1.powi(step);
                    let c2 = 1.0 - b2.powi(step);
                    let (m1, m2) = two_buffers(&mut self.buffers, ti);
                    for (((pv, &gv), m), v) in p.iter_mut().zip(g).zip(m1.iter_mut()).zip(m2.iter_mut()) {
                        let gv = if decoupled {
                            *pv *= 1.0 - lr * wd;
                            gv
                        } else {
                            gv + wd * *pv
                        };
                        *m = b1 * *m + (1.0 - b1) * gv;
                        *v = b2 * *v + (1.0 - b2) * gv * gv;
                        *pv -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

fn two_buffers(buffers: &mut [Vec<Vec<f64>>], ti: usize) -> (&mut Vec<f64>, &mut Vec<f64>) {
    let (a, b) = buffers.split_at_mut(1);
    (&mut a[0][ti], &mut b[0][ti])
}
