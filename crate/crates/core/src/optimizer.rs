//! Centralized Bayesian-optimization manager state: ask/tell with
//! multipoint UCB acquisition over an extra-trees surrogate and randomized
//! scalarization of the two objectives.
//!
//! Every proposal draws its own scalarization weights and its own
//! exploration coefficient `c ~ Exp(mean = c_mean)`, so a batch of `q`
//! proposals spreads over the exploration/exploitation trade-off and over
//! the Pareto front. Proposal `k` of a run uses an RNG stream derived from
//! `(seed, k)`; two optimizers with the same seed and history therefore
//! propose the same batch.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{Forest, ForestConfig};
use crate::seed;
use crate::space::{Configuration, SearchSpace};
use crate::trial::{ObjectiveVector, TrialRecord};

pub const DEFAULT_C_MEAN: f64 = 1.96;
pub const CHEBYSHEV_RHO: f64 = 0.05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scalarization {
    #[default]
    Linear,
    /// Augmented Chebyshev: `min_j w_j z_j + rho * sum_j w_j z_j`.
    Chebyshev,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub n_initial: usize,
    pub candidate_pool_size: usize,
    pub n_perturbations: usize,
    /// Standard deviation of incumbent perturbations in encoded space.
    pub perturbation_sigma: f64,
    pub c_mean: f64,
    pub scalarization: Scalarization,
    pub forest: ForestConfig,
    pub seed: u64,
    /// Overrides the exponential draw of `c`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_c: Option<f64>,
    /// Overrides the uniform draw of scalarization weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_weights: Option<[f64; 2]>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            n_initial: 10,
            candidate_pool_size: 2048,
            n_perturbations: 256,
            perturbation_sigma: 0.05,
            c_mean: DEFAULT_C_MEAN,
            scalarization: Scalarization::Linear,
            forest: ForestConfig::default(),
            seed: 0,
            fixed_c: None,
            fixed_weights: None,
        }
    }
}

impl OptimizerSettings {
    /// Defaults for a search with `workers` parallel evaluators.
    pub fn for_workers(workers: usize, seed: u64) -> Self {
        OptimizerSettings { n_initial: (2 * workers).max(10), seed, ..Default::default() }
    }

    fn check(&self) -> Result<()> {
        if self.candidate_pool_size == 0 {
            return Err(Error::Config("candidate_pool_size must be >= 1".into()));
        }
        if !(self.c_mean > 0.0) {
            return Err(Error::Config(format!("c_mean must be > 0, got {}", self.c_mean)));
        }
        if let Some(w) = self.fixed_weights {
            if w.iter().any(|&v| v < 0.0) || (w[0] + w[1] - 1.0).abs() > 1e-9 {
                return Err(Error::Config("fixed_weights must lie on the simplex".into()));
            }
        }
        Ok(())
    }
}

/// Upper confidence bound `mu + c * sigma`.
pub fn ucb(mu: f64, sigma: f64, c: f64) -> f64 {
    mu + c * sigma
}

/// One draw of the exploration coefficient from Exp(mean = `c_mean`).
pub fn sample_c<R: Rng + ?Sized>(rng: &mut R, c_mean: f64) -> f64 {
    Exp::new(1.0 / c_mean).expect("c_mean > 0").sample(rng)
}

/// Weights drawn uniformly on the 2-simplex.
pub fn sample_weights<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    let w: f64 = rng.random();
    [w, 1.0 - w]
}

/// Per-objective `(min, max)` over a set of objective vectors.
pub fn objective_bounds(objs: &[ObjectiveVector]) -> [(f64, f64); 2] {
    let mut b = [(f64::INFINITY, f64::NEG_INFINITY); 2];
    for o in objs {
        for (j, v) in o.as_array().into_iter().enumerate() {
            b[j].0 = b[j].0.min(v);
            b[j].1 = b[j].1.max(v);
        }
    }
    b
}

/// Min-max normalize each objective against `bounds`, then collapse with
/// `weights`. An objective whose bounds are degenerate normalizes to 0.5.
pub fn scalarize(
    objectives: &ObjectiveVector,
    weights: [f64; 2],
    bounds: [(f64, f64); 2],
    mode: Scalarization,
) -> f64 {
    let z: Vec<f64> = objectives
        .as_array()
        .iter()
        .zip(bounds)
        .map(|(&v, (lo, hi))| {
            if lo.is_finite() && hi.is_finite() && lo < hi {
                (v - lo) / (hi - lo)
            } else {
                0.5
            }
        })
        .collect();
    let linear = weights[0] * z[0] + weights[1] * z[1];
    match mode {
        Scalarization::Linear => linear,
        Scalarization::Chebyshev => (weights[0] * z[0]).min(weights[1] * z[1]) + CHEBYSHEV_RHO * linear,
    }
}

/// Everything that went into one model-based proposal.
#[derive(Clone, Debug)]
pub struct Proposal {
    pub config: Configuration,
    pub weights: [f64; 2],
    pub c: f64,
    pub forest_seed: u64,
    pub mu: f64,
    pub sigma: f64,
    /// Encoded candidates in evaluation order; the winner is the first maximizer.
    pub pool: Vec<Vec<f64>>,
    pub chosen: usize,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    space: SearchSpace,
    settings: OptimizerSettings,
    history: Vec<TrialRecord>,
    told: HashSet<u64>,
    proposals_issued: u64,
}

impl Optimizer {
    pub fn new(space: SearchSpace, settings: OptimizerSettings) -> Result<Self> {
        settings.check()?;
        Ok(Optimizer { space, settings, history: Vec::new(), told: HashSet::new(), proposals_issued: 0 })
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn settings(&self) -> &OptimizerSettings {
        &self.settings
    }

    pub fn history(&self) -> &[TrialRecord] {
        &self.history
    }

    pub fn proposals_issued(&self) -> u64 {
        self.proposals_issued
    }

    /// Position the proposal counter, e.g. when replaying a results log.
    pub fn set_proposals_issued(&mut self, n: u64) {
        self.proposals_issued = n;
    }

    fn proposal_rng(&self, index: u64) -> rand_chacha::ChaCha8Rng {
        seed::rng(seed::derive_tagged(self.settings.seed, "ask", index))
    }

    fn model_ready(&self) -> bool {
        self.history.len() >= self.settings.n_initial && self.history.iter().any(|t| t.is_success())
    }

    /// Propose `q` configurations.
    pub fn ask(&mut self, q: usize) -> Result<Vec<Configuration>> {
        if q == 0 {
            return Err(Error::Config("ask needs q >= 1".into()));
        }
        if self.settings.n_initial == 0 && self.history.is_empty() {
            return Err(Error::Config("n_initial = 0 with an empty history leaves nothing to model".into()));
        }
        let model = self.model_ready();
        let mut batch: Vec<Configuration> = Vec::with_capacity(q);
        for _ in 0..q {
            let mut rng = self.proposal_rng(self.proposals_issued);
            self.proposals_issued += 1;
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Result<Configuration> {
                if model {
                    Ok(self.propose(rng)?.config)
                } else {
                    Ok(self.space.sample(rng))
                }
            };
            let mut cfg = draw(&mut rng)?;
            if batch.contains(&cfg) {
                cfg = draw(&mut rng)?;
            }
            batch.push(cfg);
        }
        Ok(batch)
    }

    /// Like [`ask`](Self::ask) with `q = 1` but returns the full proposal
    /// record; only valid once the model phase has started.
    pub fn ask_traced(&mut self) -> Result<Proposal> {
        if !self.model_ready() {
            return Err(Error::Config("still in the initial random design".into()));
        }
        let mut rng = self.proposal_rng(self.proposals_issued);
        self.proposals_issued += 1;
        self.propose(&mut rng)
    }

    /// Record a finished trial. Failed trials are imputed at the
    /// componentwise worst objectives observed so far (including the
    /// trial's own partial objectives, if any); the imputed vector is
    /// returned and stored on the history entry.
    pub fn tell(&mut self, mut trial: TrialRecord) -> Result<Option<ObjectiveVector>> {
        if self.told.contains(&trial.trial_id) {
            return Err(Error::DuplicateTrial(trial.trial_id));
        }
        if let Some(o) = trial.objectives() {
            if !o.is_finite() {
                trial.outcome = crate::trial::Outcome::Failed {
                    reason: "non-finite objectives".into(),
                    partial: None,
                };
            }
        }
        trial.imputed = match &trial.outcome {
            crate::trial::Outcome::Success { .. } => None,
            crate::trial::Outcome::Failed { partial, .. } => {
                let partial = partial.filter(|p| p.is_finite());
                match (self.worst_observed(), partial) {
                    (Some(w), Some(p)) => Some(w.componentwise_min(&p)),
                    (w, p) => w.or(p),
                }
            }
        };
        let imputed = trial.imputed;
        self.told.insert(trial.trial_id);
        self.history.push(trial);
        Ok(imputed)
    }

    /// Restores a previously told trial verbatim, keeping its stored
    /// imputation; used when rebuilding state from a results log.
    pub fn replay(&mut self, trial: TrialRecord) -> Result<()> {
        if !self.told.insert(trial.trial_id) {
            return Err(Error::DuplicateTrial(trial.trial_id));
        }
        self.history.push(trial);
        Ok(())
    }

    /// Componentwise minimum over successful trials.
    pub fn worst_observed(&self) -> Option<ObjectiveVector> {
        self.history
            .iter()
            .filter_map(|t| t.objectives())
            .reduce(|a, b| a.componentwise_min(&b))
    }

    /// Encoded features and scalarized targets of every trial with
    /// (measured or imputed) objectives.
    pub fn training_set(&self, weights: [f64; 2]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let fallback = self.worst_observed();
        let rows: Vec<(&TrialRecord, ObjectiveVector)> = self
            .history
            .iter()
            .filter_map(|t| t.effective_objectives().or(fallback).map(|o| (t, o)))
            .collect();
        let objs: Vec<ObjectiveVector> = rows.iter().map(|(_, o)| *o).collect();
        let bounds = objective_bounds(&objs);
        let mut x = Vec::with_capacity(rows.len());
        let mut y = Vec::with_capacity(rows.len());
        for (t, o) in rows {
            x.push(self.space.encode(&t.config)?);
            y.push(scalarize(&o, weights, bounds, self.settings.scalarization));
        }
        Ok((x, y))
    }

    fn propose<R: Rng>(&self, rng: &mut R) -> Result<Proposal> {
        let s = &self.settings;
        let weights = s.fixed_weights.unwrap_or_else(|| sample_weights(rng));
        let c = s.fixed_c.unwrap_or_else(|| sample_c(rng, s.c_mean));
        let forest_seed: u64 = rng.random();
        let (x, y) = self.training_set(weights)?;
        let forest = Forest::fit(&x, &y, &ForestConfig { seed: forest_seed, ..s.forest.clone() })?;

        let incumbent = y
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if *v > y[best] { i } else { best });

        let mut configs = Vec::with_capacity(s.candidate_pool_size + s.n_perturbations);
        for _ in 0..s.candidate_pool_size {
            configs.push(self.space.sample(rng));
        }
        let noise = Normal::new(0.0, s.perturbation_sigma).map_err(|e| Error::Config(e.to_string()))?;
        for _ in 0..s.n_perturbations {
            let u: Vec<f64> = x[incumbent].iter().map(|&v| (v + noise.sample(rng)).clamp(0.0, 1.0)).collect();
            configs.push(self.space.decode(&u)?);
        }

        let mut pool = Vec::with_capacity(configs.len());
        let mut best: Option<(usize, f64, f64, f64)> = None;
        for (i, cfg) in configs.iter().enumerate() {
            let u = self.space.encode(cfg)?;
            let (mu, sigma) = forest.predict_mean_std(&u)?;
            let a = ucb(mu, sigma, c);
            if best.is_none_or(|(_, b, _, _)| a > b) {
                best = Some((i, a, mu, sigma));
            }
            pool.push(u);
        }
        let (chosen, _, mu, sigma) = best.expect("pool is non-empty");
        Ok(Proposal {
            config: configs.swap_remove(chosen),
            weights,
            c,
            forest_seed,
            mu,
            sigma,
            pool,
            chosen,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::default_space;
    use crate::trial::Stopper;

    fn told(opt: &mut Optimizer, id: u64, o: (f64, f64)) {
        let cfg = opt.space().sample(&mut seed::rng(1000 + id));
        opt.tell(TrialRecord::success(id, cfg, ObjectiveVector::new(o.0, o.1))).unwrap();
    }

    #[test]
    fn ucb_examples() {
        assert_eq!(ucb(1.0, 0.5, 0.0), 1.0);
        assert_eq!(ucb(0.0, 1.0, 1.96), 1.96);
        assert!((ucb(-2.0, 0.1, 10.0) - -1.0).abs() < 1e-15);
    }

    #[test]
    fn exponential_c_mean_and_support() {
        let mut rng = seed::rng(77);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_c(&mut rng, 1.96)).collect();
        assert!(draws.iter().all(|&c| c >= 0.0));
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.96).abs() < 0.02, "mean {mean}");
        let again: Vec<f64> = {
            let mut r = seed::rng(77);
            (0..10).map(|_| sample_c(&mut r, 1.96)).collect()
        };
        assert_eq!(&draws[..10], &again[..]);
    }

    #[test]
    fn scalarize_examples() {
        let bounds = [(0.0, 2.0), (-1.0, 1.0)];
        let top = ObjectiveVector::new(2.0, 0.3);
        assert_eq!(scalarize(&top, [1.0, 0.0], bounds, Scalarization::Linear), 1.0);
        let bottom = ObjectiveVector::new(0.0, -1.0);
        assert_eq!(scalarize(&bottom, [0.5, 0.5], bounds, Scalarization::Linear), 0.0);

        // three-point history, weights (0.3, 0.7)
        let hist = [
            ObjectiveVector::new(-0.5, 0.2),
            ObjectiveVector::new(-0.1, 0.6),
            ObjectiveVector::new(-0.3, 0.9),
        ];
        let b = objective_bounds(&hist);
        assert_eq!(b, [(-0.5, -0.1), (0.2, 0.9)]);
        // z = ((-0.3+0.5)/0.4, (0.9-0.2)/0.7) = (0.5, 1.0) -> 0.3*0.5 + 0.7*1.0
        let v = scalarize(&hist[2], [0.3, 0.7], b, Scalarization::Linear);
        assert!((v - 0.85).abs() < 1e-12);
        // chebyshev: min(0.15, 0.7) + 0.05*0.85
        let v = scalarize(&hist[2], [0.3, 0.7], b, Scalarization::Chebyshev);
        assert!((v - (0.15 + 0.05 * 0.85)).abs() < 1e-12);
        // degenerate bounds normalize to 0.5
        let v = scalarize(&hist[0], [1.0, 0.0], [(1.0, 1.0), (0.0, 1.0)], Scalarization::Linear);
        assert_eq!(v, 0.5);
    }

    #[test]
    fn initial_design_is_random_and_valid() {
        let mut opt = Optimizer::new(default_space(), OptimizerSettings { n_initial: 8, ..Default::default() }).unwrap();
        let batch = opt.ask(4).unwrap();
        assert_eq!(batch.len(), 4);
        for c in &batch {
            opt.space().validate(c).unwrap();
        }
        assert_eq!(opt.proposals_issued(), 4);
    }

    #[test]
    fn zero_initial_design_with_empty_history_is_an_error() {
        let mut opt = Optimizer::new(default_space(), OptimizerSettings { n_initial: 0, ..Default::default() }).unwrap();
        assert!(matches!(opt.ask(1), Err(Error::Config(_))));
        assert!(matches!(opt.ask(0), Err(Error::Config(_))));
    }

    #[test]
    fn tell_rejects_duplicates_and_imputes_failures() {
        let mut opt = Optimizer::new(default_space(), OptimizerSettings::default()).unwrap();
        told(&mut opt, 0, (-1.0, 0.5));
        assert_eq!(opt.history().len(), 1);
        told(&mut opt, 1, (-3.0, 0.7));
        told(&mut opt, 2, (-2.0, 0.1));
        let cfg = opt.space().sample(&mut seed::rng(9));
        let mut stopped = TrialRecord::failed(3, cfg.clone(), "constant_predictor");
        stopped.stopper = Stopper::ConstantPredictor;
        let imputed = opt.tell(stopped).unwrap();
        assert_eq!(imputed, Some(ObjectiveVector::new(-3.0, 0.1)));
        assert_eq!(opt.history()[3].imputed, imputed);
        let dup = TrialRecord::success(3, cfg, ObjectiveVector::new(0.0, 0.0));
        assert!(matches!(opt.tell(dup), Err(Error::DuplicateTrial(3))));
    }

    #[test]
    fn ask_is_deterministic_for_identical_state() {
        let mut a = Optimizer::new(default_space(), OptimizerSettings { n_initial: 3, candidate_pool_size: 64, n_perturbations: 16, forest: ForestConfig { n_trees: 10, ..Default::default() }, seed: 4, ..Default::default() }).unwrap();
        for i in 0..5 {
            told(&mut a, i, (-(i as f64), (i as f64).sin()));
        }
        let mut b = a.clone();
        assert_eq!(a.ask(3).unwrap(), b.ask(3).unwrap());
    }

    #[test]
    fn batch_of_sixteen_is_valid() {
        let mut opt = Optimizer::new(default_space(), OptimizerSettings { n_initial: 4, candidate_pool_size: 128, n_perturbations: 32, forest: ForestConfig { n_trees: 20, ..Default::default() }, ..Default::default() }).unwrap();
        for i in 0..6 {
            told(&mut opt, i, ((i as f64).cos(), (i as f64 * 0.7).sin()));
        }
        let batch = opt.ask(16).unwrap();
        assert_eq!(batch.len(), 16);
        for c in &batch {
            opt.space().validate(c).unwrap();
        }
    }

    #[test]
    fn pure_exploitation_picks_pool_argmax_of_mean() {
        let settings = OptimizerSettings {
            n_initial: 5,
            candidate_pool_size: 300,
            n_perturbations: 50,
            forest: ForestConfig { n_trees: 15, ..Default::default() },
            fixed_c: Some(0.0),
            fixed_weights: Some([0.5, 0.5]),
            seed: 12,
            ..Default::default()
        };
        let mut opt = Optimizer::new(default_space(), settings).unwrap();
        for i in 0..8 {
            told(&mut opt, i, ((i as f64 * 1.3).sin(), (i as f64 * 0.4).cos()));
        }
        let p = opt.ask_traced().unwrap();
        // independent scan of the same pool under a forest refit with the same seed
        let (x, y) = opt.training_set([0.5, 0.5]).unwrap();
        let f = Forest::fit(&x, &y, &ForestConfig { n_trees: 15, seed: p.forest_seed, ..Default::default() }).unwrap();
        let means: Vec<f64> = p.pool.iter().map(|u| f.predict_mean_std(u).unwrap().0).collect();
        let mut argmax = 0;
        for (i, m) in means.iter().enumerate() {
            if *m > means[argmax] {
                argmax = i;
            }
        }
        assert_eq!(p.chosen, argmax);
        assert_eq!(opt.space().encode(&p.config).unwrap(), p.pool[argmax]);
        assert_eq!(p.c, 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn linear_scalarization_is_monotone(
                a in -10.0f64..10.0, b in -1.0f64..1.0, delta in 0.0f64..5.0, w in 0.0f64..1.0,
                lo0 in -20.0f64..-10.0, hi0 in 10.0f64..20.0,
            ) {
                let bounds = [(lo0, hi0), (-1.0, 1.0)];
                let base = scalarize(&ObjectiveVector::new(a, b), [w, 1.0 - w], bounds, Scalarization::Linear);
                let up = scalarize(&ObjectiveVector::new(a + delta, b), [w, 1.0 - w], bounds, Scalarization::Linear);
                prop_assert!(up >= base);
            }
        }
    }
}
