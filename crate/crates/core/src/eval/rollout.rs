//! Autoregressive multi-step forecasts.

use serde::{Deserialize, Serialize};

use super::metrics::{MetricAccumulator, VariableMetrics};
use crate::error::{Error, Result};
use crate::fno::{self, Checkpoint, FnoConfig, ParamSet, Tensor4};
use crate::ocean::dataset::STATE_CHANNELS;
use crate::ocean::{PairIndex, PairedDataset};

/// Where in the ground-truth trajectory a prediction starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepContext {
    pub sim: usize,
    /// Day of the state being fed in.
    pub t: usize,
}

/// One-step model: normalized `1 × 5 × H × W` input to `1 × 4 × H × W`.
pub trait Predictor {
    fn predict(&self, input: &Tensor4, ctx: StepContext) -> Result<Tensor4>;
}

pub struct FnoPredictor {
    pub config: FnoConfig,
    pub params: ParamSet,
}

impl FnoPredictor {
    pub fn from_checkpoint(ck: Checkpoint) -> Self {
        FnoPredictor { config: ck.config, params: ck.params }
    }
}

impl Predictor for FnoPredictor {
    fn predict(&self, input: &Tensor4, _ctx: StepContext) -> Result<Tensor4> {
        fno::predict(&self.config, &self.params, input)
    }
}

/// Returns the true next frame where one exists (persistence past the end).
pub struct OraclePredictor<'a> {
    pub data: &'a PairedDataset,
}

impl Predictor for OraclePredictor<'_> {
    fn predict(&self, input: &Tensor4, ctx: StepContext) -> Result<Tensor4> {
        let g = self.data.grid();
        let state = if ctx.t + 1 < self.data.timesteps() {
            self.data.target(PairIndex { sim: ctx.sim, t: ctx.t }).to_vec()
        } else {
            input.sample(0)[..STATE_CHANNELS * g * g].to_vec()
        };
        Tensor4::from_vec([1, STATE_CHANNELS, g, g], state)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub step: usize,
    /// Absent when the step lies beyond the available ground truth.
    pub variables: Option<Vec<VariableMetrics>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    pub steps: Vec<RolloutStep>,
    /// Normalized `5 × H × W` input fed at each step.
    pub inputs: Vec<Vec<f64>>,
    /// Normalized, land-masked `4 × H × W` prediction of each step.
    pub predictions: Vec<Vec<f64>>,
    /// Some steps had no ground truth to compare against.
    pub truncated: bool,
}

/// Rolls `model` forward `steps` times from day `t0` of simulation `sim`,
/// holding the diffusivity channel fixed and feeding each prediction back
/// as the next state.
pub fn rollout(model: &dyn Predictor, data: &PairedDataset, sim: usize, t0: usize, steps: usize) -> Result<RolloutResult> {
    if steps < 1 {
        return Err(Error::Config("rollout needs at least one step".into()));
    }
    if sim >= data.n_sims() || t0 >= data.timesteps() {
        return Err(Error::Data(format!("no frame {t0} of simulation {sim}")));
    }
    let g = data.grid();
    let hw = g * g;
    let mask = data.mask();
    let mut input = data.frame(sim, t0).to_vec();
    let mut out = RolloutResult { steps: Vec::new(), inputs: Vec::new(), predictions: Vec::new(), truncated: false };
    for k in 1..=steps {
        let x = Tensor4::from_vec([1, input.len() / hw, g, g], input.clone())?;
        let y = model.predict(&x, StepContext { sim, t: t0 + k - 1 })?;
        if y.shape() != [1, STATE_CHANNELS, g, g] {
            return Err(Error::Shape(format!("predictor returned {:?}", y.shape())));
        }
        let mut pred = y.into_vec();
        for c in 0..STATE_CHANNELS {
            for (p, &wet) in mask.iter().enumerate() {
                if !wet {
                    pred[c * hw + p] = 0.0;
                }
            }
        }
        let variables = (t0 + k < data.timesteps()).then(|| {
            let truth = &data.frame(sim, t0 + k)[..STATE_CHANNELS * hw];
            let mut acc = MetricAccumulator::new(data.climatology(), mask);
            acc.add_sample(&pred, truth);
            acc.finish().variables
        });
        out.truncated |= variables.is_none();
        out.steps.push(RolloutStep { step: k, variables });
        out.inputs.push(std::mem::take(&mut input));
        let prev = out.inputs.last().unwrap();
        input = pred.clone();
        input.extend_from_slice(&prev[STATE_CHANNELS * hw..]);
        out.predictions.push(pred);
    }
    Ok(out)
}
