//! Double-gyre advection–diffusion of two tracers in a circular basin.
//!
//! The domain is the unit square with cell-centred tracers on an `n × n`
//! grid; the basin is the inscribed disk. The streamfunction is sampled at
//! cell corners and set to zero on every corner touching a land cell, so
//! face velocities from corner differences are discretely divergence-free
//! and vanish on the coastline.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const CHANNELS: usize = 5;
pub const CHANNEL_NAMES: [&str; CHANNELS] = ["salinity", "temperature", "u", "v", "kappa"];
pub const KAPPA_RANGE: [f64; 2] = [200.0, 2000.0];
/// Nondimensional diffusivity per unit of physical kappa; maps [200, 2000]
/// onto [5e-4, 5e-3].
pub const KAPPA_SCALE: f64 = 2.5e-6;
pub const GYRE_EPSILON: f64 = 0.25;
const MAX_ADVECTIVE_CFL: f64 = 0.9;
const MAX_DIFFUSIVE_CFL: f64 = 0.25;
const AUTO_CFL_BUDGET: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_sims: usize,
    /// Output frames per simulation, one per day starting at day 0.
    pub timesteps_out: usize,
    pub grid: usize,
    pub kappa_range: [f64; 2],
    /// Explicit Euler substeps per day; chosen from the stability limits when absent.
    pub substeps_per_day: Option<usize>,
    pub gyre_amplitude: f64,
    /// Days per oscillation of the gyre boundary.
    pub gyre_period: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_sims: 12,
            timesteps_out: 10,
            grid: 32,
            kappa_range: KAPPA_RANGE,
            substeps_per_day: None,
            gyre_amplitude: 0.1,
            gyre_period: 10.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sims < 1 {
            return Err(Error::Config("n_sims must be >= 1".into()));
        }
        if self.grid < 8 {
            return Err(Error::Config(format!("grid must be >= 8, got {}", self.grid)));
        }
        if self.timesteps_out < 1 {
            return Err(Error::Config("timesteps_out must be >= 1".into()));
        }
        let [lo, hi] = self.kappa_range;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
            return Err(Error::Config(format!("kappa range [{lo}, {hi}] must satisfy 0 <= lo < hi")));
        }
        if !(self.gyre_amplitude.is_finite() && self.gyre_amplitude >= 0.0) {
            return Err(Error::Config("gyre_amplitude must be finite and >= 0".into()));
        }
        if !(self.gyre_period.is_finite() && self.gyre_period > 0.0) {
            return Err(Error::Config("gyre_period must be > 0".into()));
        }
        if self.substeps_per_day == Some(0) {
            return Err(Error::Config("substeps_per_day must be >= 1".into()));
        }
        Ok(())
    }

    /// Bound on face speeds: |u| <= pi A and |v| <= 2 pi A (1 + 2 eps).
    pub fn max_speed(&self) -> f64 {
        PI * self.gyre_amplitude * 2.0 * (1.0 + 2.0 * GYRE_EPSILON)
    }

    /// Substeps per day: the configured value, or the smallest count keeping
    /// the combined advective and diffusive numbers within budget.
    pub fn substeps(&self) -> usize {
        self.substeps_per_day.unwrap_or_else(|| {
            let n = self.grid as f64;
            let kappa = nondim_kappa(self.kappa_range[1]);
            let rate = 2.0 * self.max_speed() * n + 4.0 * kappa * n * n;
            ((rate / AUTO_CFL_BUDGET).ceil() as usize).max(1)
        })
    }

    /// Checks the advective and diffusive stability limits for a diffusivity.
    pub fn check_cfl(&self, kappa: f64) -> Result<()> {
        let n = self.grid as f64;
        let dt = 1.0 / self.substeps() as f64;
        let adv = dt * self.max_speed() * n;
        if adv > MAX_ADVECTIVE_CFL {
            return Err(Error::Cfl(format!(
                "advective number dt*max|u|/dx = {adv:.4} exceeds {MAX_ADVECTIVE_CFL}"
            )));
        }
        let diff = dt * nondim_kappa(kappa) * n * n;
        if diff > MAX_DIFFUSIVE_CFL {
            return Err(Error::Cfl(format!(
                "diffusive number dt*kappa/dx^2 = {diff:.4} exceeds {MAX_DIFFUSIVE_CFL}"
            )));
        }
        Ok(())
    }
}

pub fn nondim_kappa(kappa: f64) -> f64 {
    kappa * KAPPA_SCALE
}

/// Inscribed-disk mask, row-major (`y` rows, `x` columns).
pub fn basin_mask(n: usize) -> Vec<bool> {
    let mut m = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            let x = (j as f64 + 0.5) / n as f64 - 0.5;
            let y = (i as f64 + 0.5) / n as f64 - 0.5;
            m[i * n + j] = x * x + y * y <= 0.25;
        }
    }
    m
}

/// One simulation's state and stepping.
pub struct Solver {
    n: usize,
    amplitude: f64,
    period: f64,
    kappa: f64,
    dt: f64,
    time: f64,
    mask: Vec<bool>,
    wet_corner: Vec<bool>,
    psi: Vec<f64>,
    /// x-face velocities, `n × (n+1)`.
    u: Vec<f64>,
    /// y-face velocities, `(n+1) × n`.
    v: Vec<f64>,
    tracers: [Vec<f64>; 2],
    scratch: Vec<f64>,
}

impl Solver {
    /// `kappa` is physical; `sim_seed` drives the initial tracer fields.
    pub fn new(gen: &GenConfig, kappa: f64, sim_seed: u64) -> Result<Self> {
        gen.validate()?;
        gen.check_cfl(kappa)?;
        let n = gen.grid;
        let mask = basin_mask(n);
        let mut wet_corner = vec![false; (n + 1) * (n + 1)];
        for a in 1..n {
            for b in 1..n {
                wet_corner[a * (n + 1) + b] =
                    mask[(a - 1) * n + b - 1] && mask[(a - 1) * n + b] && mask[a * n + b - 1] && mask[a * n + b];
            }
        }
        let tracers = initial_tracers(n, &mask, sim_seed);
        let mut s = Solver {
            n,
            amplitude: gen.gyre_amplitude,
            period: gen.gyre_period,
            kappa: nondim_kappa(kappa),
            dt: 1.0 / gen.substeps() as f64,
            time: 0.0,
            mask,
            wet_corner,
            psi: vec![0.0; (n + 1) * (n + 1)],
            u: vec![0.0; n * (n + 1)],
            v: vec![0.0; (n + 1) * n],
            tracers,
            scratch: vec![0.0; n * n],
        };
        s.update_velocity();
        Ok(s)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn tracer(&self, k: usize) -> &[f64] {
        &self.tracers[k]
    }

    pub fn substep_seconds(&self) -> f64 {
        self.dt
    }

    fn update_velocity(&mut self) {
        let n = self.n;
        let nf = n as f64;
        let s = (2.0 * PI * self.time / self.period).sin();
        let (a, b) = (GYRE_EPSILON * s, 1.0 - 2.0 * GYRE_EPSILON * s);
        for r in 0..=n {
            let y = r as f64 / nf;
            for c in 0..=n {
                let idx = r * (n + 1) + c;
                self.psi[idx] = if self.wet_corner[idx] {
                    let xx = 2.0 * c as f64 / nf;
                    let f = a * xx * xx + b * xx;
                    self.amplitude * (PI * f).sin() * (PI * y).sin()
                } else {
                    0.0
                };
            }
        }
        let w = n + 1;
        for i in 0..n {
            for c in 0..=n {
                self.u[i * w + c] = -(self.psi[(i + 1) * w + c] - self.psi[i * w + c]) * nf;
            }
        }
        for r in 0..=n {
            for j in 0..n {
                self.v[r * n + j] = (self.psi[r * w + j + 1] - self.psi[r * w + j]) * nf;
            }
        }
    }

    /// Cell-centred velocity components (zero on land).
    pub fn cell_velocity(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mut uc = vec![0.0; n * n];
        let mut vc = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if self.mask[i * n + j] {
                    uc[i * n + j] = 0.5 * (self.u[i * (n + 1) + j] + self.u[i * (n + 1) + j + 1]);
                    vc[i * n + j] = 0.5 * (self.v[i * n + j] + self.v[(i + 1) * n + j]);
                }
            }
        }
        (uc, vc)
    }

    /// One explicit Euler substep of flux-form upwind advection plus
    /// central diffusion; faces touching land carry no flux.
    pub fn step(&mut self) {
        let n = self.n;
        let nf = n as f64;
        let k_face = self.kappa * nf; // kappa / dx, times (c_r - c_l) gives flux
        let coef = self.dt * nf; // dt / dx
        for k in 0..2 {
            let c = &self.tracers[k];
            let out = &mut self.scratch;
            out.copy_from_slice(c);
            // x faces between (i, j-1) and (i, j)
            for i in 0..n {
                for j in 1..n {
                    let (l, r) = (i * n + j - 1, i * n + j);
                    if !(self.mask[l] && self.mask[r]) {
                        continue;
                    }
                    let u = self.u[i * (n + 1) + j];
                    let flux = if u > 0.0 { u * c[l] } else { u * c[r] } - k_face * (c[r] - c[l]);
                    out[l] -= coef * flux;
                    out[r] += coef * flux;
                }
            }
            // y faces between (i-1, j) and (i, j)
            for i in 1..n {
                for j in 0..n {
                    let (l, r) = ((i - 1) * n + j, i * n + j);
                    if !(self.mask[l] && self.mask[r]) {
                        continue;
                    }
                    let v = self.v[i * n + j];
                    let flux = if v > 0.0 { v * c[l] } else { v * c[r] } - k_face * (c[r] - c[l]);
                    out[l] -= coef * flux;
                    out[r] += coef * flux;
                }
            }
            std::mem::swap(&mut self.tracers[k], &mut self.scratch);
        }
        self.time += self.dt;
        self.update_velocity();
    }

    /// Advances one day.
    pub fn step_day(&mut self) {
        let steps = (1.0 / self.dt).round() as usize;
        for _ in 0..steps {
            self.step();
        }
    }
}

fn initial_tracers(n: usize, mask: &[bool], sim_seed: u64) -> [Vec<f64>; 2] {
    let mut rng = seed::rng(sim_seed);
    let mut fields = [vec![0.0; n * n], vec![0.0; n * n]];
    for (k, field) in fields.iter_mut().enumerate() {
        let bumps: Vec<[f64; 4]> = (0..4)
            .map(|_| {
                [
                    rng.random_range(0.2..0.8),
                    rng.random_range(0.2..0.8),
                    rng.random_range(0.06..0.15),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let tilt = rng.random_range(-0.5..0.5);
        for i in 0..n {
            for j in 0..n {
                if !mask[i * n + j] {
                    continue;
                }
                let x = (j as f64 + 0.5) / n as f64;
                let y = (i as f64 + 0.5) / n as f64;
                let base = if k == 0 { 2.0 * y + tilt * x } else { (PI * x).cos() + tilt * y };
                let bump: f64 = bumps
                    .iter()
                    .map(|&[cx, cy, s, a]| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp())
                    .sum();
                field[i * n + j] = base + bump;
            }
        }
    }
    fields
}

/// All simulations: states stored as `f32`, sim-major then `(T, H, W, C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationEnsemble {
    pub gen: GenConfig,
    pub kappas: Vec<f64>,
    pub mask: Vec<bool>,
    pub states: Vec<f32>,
}

impl SimulationEnsemble {
    pub fn n_sims(&self) -> usize {
        self.kappas.len()
    }

    pub fn timesteps(&self) -> usize {
        self.gen.timesteps_out
    }

    pub fn grid(&self) -> usize {
        self.gen.grid
    }

    pub fn shape(&self) -> [usize; 5] {
        [self.n_sims(), self.timesteps(), self.grid(), self.grid(), CHANNELS]
    }

    fn frame_len(&self) -> usize {
        self.grid() * self.grid() * CHANNELS
    }

    /// Channel-last `H × W × C` frame.
    pub fn frame(&self, sim: usize, t: usize) -> &[f32] {
        let len = self.frame_len();
        let start = (sim * self.timesteps() + t) * len;
        &self.states[start..start + len]
    }
}

/// Runs one simulation and returns its `T × H × W × C` frames.
pub fn simulate(gen: &GenConfig, kappa: f64, sim_seed: u64) -> Result<Vec<f32>> {
    let mut solver = Solver::new(gen, kappa, sim_seed)?;
    let n = gen.grid;
    let mut out = Vec::with_capacity(gen.timesteps_out * n * n * CHANNELS);
    for t in 0..gen.timesteps_out {
        if t > 0 {
            solver.step_day();
        }
        let (uc, vc) = solver.cell_velocity();
        for p in 0..n * n {
            if !solver.mask[p] {
                out.extend([0.0f32; CHANNELS]);
                continue;
            }
            let vals = [solver.tracers[0][p], solver.tracers[1][p], uc[p], vc[p], kappa];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("non-finite state at day {t}")));
            }
            out.extend(vals.map(|v| v as f32));
        }
    }
    Ok(out)
}

/// Seed of simulation `index` under ensemble seed `seed`.
pub fn sim_seed(seed_value: u64, index: usize) -> u64 {
    seed::derive_tagged(seed_value, "sim", index as u64)
}

/// Generates every simulation; kappa per simulation ~ U(kappa_range).
pub fn generate_ensemble(gen: &GenConfig) -> Result<SimulationEnsemble> {
    gen.validate()?;
    gen.check_cfl(gen.kappa_range[1])?;
    let mut rng = seed::rng(seed::derive_tagged(gen.seed, "kappa", 0));
    let kappas: Vec<f64> = (0..gen.n_sims).map(|_| rng.random_range(gen.kappa_range[0]..=gen.kappa_range[1])).collect();
    let mut states = Vec::new();
    for (i, &k) in kappas.iter().enumerate() {
        states.extend(simulate(gen, k, sim_seed(gen.seed, i))?);
    }
    Ok(SimulationEnsemble { gen: gen.clone(), kappas, mask: basin_mask(gen.grid), states })
}
