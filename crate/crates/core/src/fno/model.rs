//! FNO forward and reverse passes.
//!
//! Pipeline: optional coordinate channels, optional spatial padding,
//! pointwise lift + activation, `num_fno` blocks of
//! `gelu(spectral_conv(x) + W x + b)`, a pointwise projection MLP, a final
//! affine to the output channels, and a crop back to the input grid.
//!
//! Parameters live in a [`ParamSet`]: a flat list of named tensors whose
//! order is a function of the [`FnoConfig`]. Complex tensors store
//! interleaved `(re, im)` pairs; their gradients hold `(dL/dre, dL/dim)`.

use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::activation::{Activation, PRELU_INIT};
use super::fft::Fft2;
use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::seed;
use crate::space::Configuration;

pub const PADDING_TYPES: [&str; 4] = ["constant", "reflect", "replicate", "circular"];
pub const DEFAULT_PAD_WIDTH: usize = 8;
pub const STATE_CHANNELS: usize = 4;
/// State channels plus the diffusivity channel.
pub const BASE_INPUT_CHANNELS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaddingType {
    Constant,
    Reflect,
    Replicate,
    Circular,
}

impl FromStr for PaddingType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(PaddingType::Constant),
            "reflect" => Ok(PaddingType::Reflect),
            "replicate" => Ok(PaddingType::Replicate),
            "circular" => Ok(PaddingType::Circular),
            _ => Err(Error::Config(format!("unknown padding type `{s}`"))),
        }
    }
}

impl PaddingType {
    /// Source index along an axis of length `n` for padded position `i - pad`.
    fn source(self, i: isize, n: usize) -> Option<usize> {
        let n_i = n as isize;
        if (0..n_i).contains(&i) {
            return Some(i as usize);
        }
        match self {
            PaddingType::Constant => None,
            PaddingType::Replicate => Some(i.clamp(0, n_i - 1) as usize),
            PaddingType::Circular => Some(i.rem_euclid(n_i) as usize),
            PaddingType::Reflect => {
                if n == 1 {
                    return Some(0);
                }
                let period = 2 * (n_i - 1);
                let m = i.rem_euclid(period);
                Some(if m < n_i { m } else { period - m } as usize)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FnoConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub padding: bool,
    pub padding_type: PaddingType,
    pub pad_width: usize,
    pub coord_feat: bool,
    pub lift_act: Activation,
    pub block_act: Activation,
    pub proj_act: Activation,
    pub num_fno: usize,
    pub num_latent_feat: usize,
    pub num_modes: usize,
    pub num_proj_layers: usize,
    pub proj_size: usize,
}

impl FnoConfig {
    /// Architecture part of a hyperparameter configuration, with the mode
    /// count clamped to what a `grid × grid` input (after padding) holds.
    pub fn from_configuration(c: &Configuration, grid: usize) -> Result<Self> {
        let count = |name: &str| -> Result<usize> {
            let v = c.int(name)?;
            usize::try_from(v).map_err(|_| Error::Config(format!("`{name}` must be >= 0")))
        };
        let mut cfg = FnoConfig {
            in_channels: BASE_INPUT_CHANNELS,
            out_channels: STATE_CHANNELS,
            padding: c.bool("padding")?,
            padding_type: c.str("padding_type")?.parse()?,
            pad_width: DEFAULT_PAD_WIDTH,
            coord_feat: c.bool("coord_feat")?,
            lift_act: c.str("lift_act")?.parse()?,
            block_act: Activation::Gelu,
            proj_act: c.str("proj_act")?.parse()?,
            num_fno: count("num_FNO")?,
            num_latent_feat: count("num_latent_feat")?,
            num_modes: count("num_modes")?,
            num_proj_layers: count("num_proj_layers")?,
            proj_size: count("proj_size")?,
        };
        let padded = grid + 2 * cfg.pad();
        cfg.num_modes = cfg.num_modes.min(max_modes(padded, padded));
        cfg.check()?;
        Ok(cfg)
    }

    pub fn pad(&self) -> usize {
        if self.padding {
            self.pad_width
        } else {
            0
        }
    }

    /// Channels entering the lifting layer.
    pub fn lift_in(&self) -> usize {
        self.in_channels + if self.coord_feat { 2 } else { 0 }
    }

    pub fn check(&self) -> Result<()> {
        let fields = [
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("num_latent_feat", self.num_latent_feat),
            ("num_modes", self.num_modes),
            ("num_proj_layers", self.num_proj_layers),
            ("proj_size", self.proj_size),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be >= 1")));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        param_specs(self).iter().map(|s| s.len()).sum()
    }
}

/// Largest retained mode count for an `h × w` grid.
pub fn max_modes(h: usize, w: usize) -> usize {
    h.min(w) / 2 + 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub complex: bool,
    pub data: Vec<f64>,
}

impl ParamTensor {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub tensors: Vec<ParamTensor>,
}

impl ParamSet {
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor { data: vec![0.0; t.data.len()], ..t.clone() })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn scale(&mut self, k: f64) {
        self.tensors.iter_mut().flat_map(|t| t.data.iter_mut()).for_each(|v| *v *= k);
    }

    /// FNV-1a over the raw bits; identifies the exact parameter state a
    /// forward cache was computed from.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xCBF2_9CE4_8422_2325u64;
        for t in &self.tensors {
            for v in &t.data {
                h = (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01B3);
            }
            h = (h ^ t.data.len() as u64).wrapping_mul(0x0000_0100_0000_01B3);
        }
        h
    }

    pub fn shapes_match(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape && a.data.len() == b.data.len())
    }
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub complex: bool,
}

impl ParamSpec {
    fn len(&self) -> usize {
        self.shape.iter().product::<usize>() * if self.complex { 2 } else { 1 }
    }
}

fn spec(name: String, shape: Vec<usize>, complex: bool) -> ParamSpec {
    ParamSpec { name, shape, complex }
}

/// Named parameter shapes, in storage order.
pub fn param_specs(cfg: &FnoConfig) -> Vec<ParamSpec> {
    let l = cfg.num_latent_feat;
    let m = cfg.num_modes;
    let mut v = vec![
        spec("lift.weight".into(), vec![l, cfg.lift_in()], false),
        spec("lift.bias".into(), vec![l], false),
    ];
    if cfg.lift_act.has_slope() {
        v.push(spec("lift.prelu".into(), vec![1], false));
    }
    for b in 0..cfg.num_fno {
        v.push(spec(format!("block{b}.spectral"), vec![2 * m - 1, m, l, l], true));
        v.push(spec(format!("block{b}.weight"), vec![l, l], false));
        v.push(spec(format!("block{b}.bias"), vec![l], false));
    }
    let mut width = l;
    for j in 0..cfg.num_proj_layers {
        v.push(spec(format!("proj{j}.weight"), vec![cfg.proj_size, width], false));
        v.push(spec(format!("proj{j}.bias"), vec![cfg.proj_size], false));
        if cfg.proj_act.has_slope() {
            v.push(spec(format!("proj{j}.prelu"), vec![1], false));
        }
        width = cfg.proj_size;
    }
    v.push(spec("out.weight".into(), vec![cfg.out_channels, width], false));
    v.push(spec("out.bias".into(), vec![cfg.out_channels], false));
    v
}

struct BlockIdx {
    spectral: usize,
    weight: usize,
    bias: usize,
}

struct ProjIdx {
    weight: usize,
    bias: usize,
    slope: Option<usize>,
}

struct Layout {
    lift_w: usize,
    lift_b: usize,
    lift_slope: Option<usize>,
    blocks: Vec<BlockIdx>,
    proj: Vec<ProjIdx>,
    out_w: usize,
    out_b: usize,
}

fn layout(cfg: &FnoConfig) -> Layout {
    let mut i = 0;
    let mut next = || {
        i += 1;
        i - 1
    };
    let lift_w = next();
    let lift_b = next();
    let lift_slope = cfg.lift_act.has_slope().then(&mut next);
    let blocks = (0..cfg.num_fno)
        .map(|_| BlockIdx { spectral: next(), weight: next(), bias: next() })
        .collect();
    let proj = (0..cfg.num_proj_layers)
        .map(|_| ProjIdx { weight: next(), bias: next(), slope: cfg.proj_act.has_slope().then(&mut next) })
        .collect();
    Layout { lift_w, lift_b, lift_slope, blocks, proj, out_w: next(), out_b: next() }
}

/// Affine weights ~ U(±1/sqrt(fan_in)), biases 0, prelu slopes 0.25,
/// spectral weights with real and imaginary parts ~ N(0, (1/latent^2)^2).
pub fn init_params(cfg: &FnoConfig, seed_value: u64) -> ParamSet {
    let mut rng = seed::rng(seed::derive_tagged(seed_value, "init", 0));
    let std = 1.0 / (cfg.num_latent_feat * cfg.num_latent_feat) as f64;
    let normal = Normal::new(0.0, std).expect("positive std");
    let tensors = param_specs(cfg)
        .into_iter()
        .map(|s| {
            let n = s.len();
            let data = if s.complex {
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            } else if s.name.ends_with(".bias") {
                vec![0.0; n]
            } else if s.name.ends_with(".prelu") {
                vec![PRELU_INIT; n]
            } else {
                let bound = 1.0 / (s.shape[1] as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
            };
            ParamTensor { name: s.name, shape: s.shape, complex: s.complex, data }
        })
        .collect();
    ParamSet { tensors }
}

fn as_complex(v: &[f64]) -> &[Complex64] {
    assert!(v.len() % 2 == 0);
    // SAFETY: Complex64 is repr(C) { re: f64, im: f64 } with f64 alignment.
    unsafe { std::slice::from_raw_parts(v.as_ptr() as *const Complex64, v.len() / 2) }
}

fn as_complex_mut(v: &mut [f64]) -> &mut [Complex64] {
    assert!(v.len() % 2 == 0);
    // SAFETY: see `as_complex`.
    unsafe { std::slice::from_raw_parts_mut(v.as_mut_ptr() as *mut Complex64, v.len() / 2) }
}

/// `c = alpha * a·b + beta * c` for row/column-strided matrices.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: bounds checked above; c is row-major m × n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Complex `c += a·b` with `a` (`m × k`) and `c` (`m × n`) row-major and
/// `b` strided.
fn zgemm_acc(m: usize, k: usize, n: usize, a: &[Complex64], b: &[Complex64], (rsb, csb): (usize, usize), c: &mut [Complex64]) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(a.len() >= m * k && c.len() >= m * n);
    assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    let one = [1.0, 0.0];
    // SAFETY: bounds checked above; Complex64 is repr(C) {re, im}.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            one,
            a.as_ptr() as *const [f64; 2],
            k as isize,
            1,
            b.as_ptr() as *const [f64; 2],
            rsb as isize,
            csb as isize,
            one,
            c.as_mut_ptr() as *mut [f64; 2],
            n as isize,
            1,
        );
    }
}

fn affine_forward(w: &[f64], bias: &[f64], cout: usize, x: &Tensor4) -> Tensor4 {
    let [bsz, cin, h, wd] = x.shape();
    let p = h * wd;
    let mut y = Tensor4::zeros([bsz, cout, h, wd]);
    for b in 0..bsz {
        let yb = y.sample_mut(b);
        gemm(cout, cin, p, w, (cin, 1), x.sample(b), (p, 1), 0.0, yb);
        for (o, plane) in yb.chunks_mut(p).enumerate() {
            plane.iter_mut().for_each(|v| *v += bias[o]);
        }
    }
    y
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
fn affine_backward(
    w: &[f64],
    cout: usize,
    x: &Tensor4,
    gy: &Tensor4,
    gw: &mut [f64],
    gb: &mut [f64],
    want_gx: bool,
) -> Option<Tensor4> {
    let [bsz, cin, h, wd] = x.shape();
    let p = h * wd;
    let mut gx = want_gx.then(|| Tensor4::zeros(x.shape()));
    for b in 0..bsz {
        let g = gy.sample(b);
        gemm(cout, p, cin, g, (p, 1), x.sample(b), (1, p), 1.0, gw);
        for (o, plane) in g.chunks(p).enumerate() {
            gb[o] += plane.iter().sum::<f64>();
        }
        if let Some(gx) = gx.as_mut() {
            gemm(cin, cout, p, w, (1, cin), g, (p, 1), 0.0, gx.sample_mut(b));
        }
    }
    gx
}

/// Retained (spectrum row, weight row) pairs: rows `0..m` map to weight
/// rows `0..m`, and negative frequency `-(j+1)` (spectrum row `h-1-j`) maps
/// to weight row `m + j` unless that row is already a positive one.
fn retained_rows(h: usize, m: usize) -> Vec<(usize, usize)> {
    let mut rows: Vec<(usize, usize)> = (0..m.min(h)).map(|k| (k, k)).collect();
    for j in 0..m.saturating_sub(1) {
        if let Some(row) = h.checked_sub(1 + j) {
            if row >= m {
                rows.push((row, m + j));
            }
        }
    }
    rows
}

/// Spectral convolution on a fixed grid.
pub struct SpectralConv {
    fft: Fft2,
    h: usize,
    w: usize,
    modes: usize,
    rows: Vec<(usize, usize)>,
}

impl SpectralConv {
    pub fn new(h: usize, w: usize, modes: usize) -> Result<Self> {
        if h < 2 || w < 2 {
            return Err(Error::Shape(format!("grid {h}x{w} too small")));
        }
        if modes == 0 || modes > max_modes(h, w) {
            return Err(Error::Shape(format!(
                "num_modes {modes} exceeds {} for a {h}x{w} grid",
                max_modes(h, w)
            )));
        }
        Ok(SpectralConv { fft: Fft2::new(h, w), h, w, modes, rows: retained_rows(h, modes) })
    }

    /// Spectrum rows that survive truncation.
    pub fn retained_spectrum_rows(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.0).collect()
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Input spectra and mixed output coefficients on the retained modes,
    /// both mode-major (`modes × batch × channels`).
    fn mix(&self, weights: &[f64], cout: usize, x: &Tensor4) -> (Vec<Complex64>, Vec<Complex64>) {
        let [bsz, cin, h, w] = x.shape();
        assert_eq!((h, w), (self.h, self.w));
        let m = self.modes;
        let r = as_complex(weights);
        assert_eq!(r.len(), (2 * m - 1) * m * cin * cout);
        let nk = self.rows.len() * m;
        let zero = Complex64::new(0.0, 0.0);
        let mut spectra = vec![zero; nk * bsz * cin];
        for b in 0..bsz {
            for i in 0..cin {
                let s = self.fft.forward(x.plane(b, i), m);
                for (k, off) in self.offsets().enumerate() {
                    spectra[(k * bsz + b) * cin + i] = s[off];
                }
            }
        }
        let mut y = vec![zero; nk * bsz * cout];
        for (k, rbase) in self.weight_bases(cin, cout).enumerate() {
            let xs = &spectra[k * bsz * cin..(k + 1) * bsz * cin];
            let ys = &mut y[k * bsz * cout..(k + 1) * bsz * cout];
            zgemm_acc(bsz, cin, cout, xs, &r[rbase..rbase + cin * cout], (cout, 1), ys);
        }
        (spectra, y)
    }

    /// `h × ncols` half spectrum of output channel `o` of sample `b`, zero
    /// outside the retained modes.
    fn scatter(&self, y: &[Complex64], bsz: usize, cout: usize, b: usize, o: usize, ncols: usize) -> Vec<Complex64> {
        let m = self.modes;
        let mut s = vec![Complex64::new(0.0, 0.0); self.h * ncols];
        for (k, off) in self.offsets().enumerate() {
            s[off / m * ncols + off % m] = y[(k * bsz + b) * cout + o];
        }
        s
    }

    /// `weights`: interleaved complex `[2m-1, m, cin, cout]`. Returns the
    /// output and the retained input spectra, mode-major (`modes × batch × cin`).
    pub fn forward(&self, weights: &[f64], cout: usize, x: &Tensor4) -> (Tensor4, Vec<Complex64>) {
        let [bsz, _, h, w] = x.shape();
        let (spectra, y) = self.mix(weights, cout, x);
        let mut out = Tensor4::zeros([bsz, cout, h, w]);
        for b in 0..bsz {
            for o in 0..cout {
                let s = self.scatter(&y, bsz, cout, b, o, self.modes);
                out.plane_mut(b, o).copy_from_slice(&self.fft.inverse(&s, self.modes));
            }
        }
        (out, spectra)
    }

    /// Full `h × (w/2+1)` half spectra of the output, `batch × cout` of
    /// them in order; truncated modes are exactly zero.
    pub fn output_spectrum(&self, weights: &[f64], cout: usize, x: &Tensor4) -> Vec<Vec<Complex64>> {
        let bsz = x.batch();
        let (_, y) = self.mix(weights, cout, x);
        let half = self.fft.half_width();
        (0..bsz * cout).map(|j| self.scatter(&y, bsz, cout, j / cout, j % cout, half)).collect()
    }

    /// Offsets of the retained modes within an `h × m` half spectrum.
    fn offsets(&self) -> impl Iterator<Item = usize> + '_ {
        let m = self.modes;
        self.rows.iter().flat_map(move |&(row, _)| (0..m).map(move |kw| row * m + kw))
    }

    /// Complex offset of each retained mode's `cin × cout` weight block.
    fn weight_bases(&self, cin: usize, cout: usize) -> impl Iterator<Item = usize> + '_ {
        let m = self.modes;
        self.rows.iter().flat_map(move |&(_, wrow)| (0..m).map(move |kw| (wrow * m + kw) * cin * cout))
    }

    /// Accumulates into `grad_weights` (same layout as the weights) and
    /// returns the input gradient.
    pub fn backward(
        &self,
        weights: &[f64],
        spectra: &[Complex64],
        gy: &Tensor4,
        grad_weights: &mut [f64],
        cin: usize,
    ) -> Tensor4 {
        let [bsz, cout, h, w] = gy.shape();
        let m = self.modes;
        let r = as_complex(weights);
        let gr = as_complex_mut(grad_weights);
        let norm = 1.0 / (h * w) as f64;
        let nk = self.rows.len() * m;
        let zero = Complex64::new(0.0, 0.0);
        // dL/dY = c_k/(HW) * rfft2(gy) on the retained modes
        let mut g_y = vec![zero; nk * bsz * cout];
        for b in 0..bsz {
            for o in 0..cout {
                let s = self.fft.forward(gy.plane(b, o), m);
                for (k, off) in self.offsets().enumerate() {
                    g_y[(k * bsz + b) * cout + o] = s[off] * (self.fft.column_weight(off % m) * norm);
                }
            }
        }
        let xconj: Vec<Complex64> = spectra.iter().map(|v| v.conj()).collect();
        let mut xt = vec![zero; cin * bsz];
        let mut rconj = vec![zero; cin * cout];
        let mut g_x = vec![zero; nk * bsz * cin];
        for (k, rbase) in self.weight_bases(cin, cout).enumerate() {
            let gys = &g_y[k * bsz * cout..(k + 1) * bsz * cout];
            // gR += conj(X)^T gY
            let xs = &xconj[k * bsz * cin..(k + 1) * bsz * cin];
            for b in 0..bsz {
                for i in 0..cin {
                    xt[i * bsz + b] = xs[b * cin + i];
                }
            }
            zgemm_acc(cin, bsz, cout, &xt, gys, (cout, 1), &mut gr[rbase..rbase + cin * cout]);
            // gX = gY conj(R)^T
            for (dst, v) in rconj.iter_mut().zip(&r[rbase..rbase + cin * cout]) {
                *dst = v.conj();
            }
            zgemm_acc(bsz, cout, cin, gys, &rconj, (1, cout), &mut g_x[k * bsz * cin..(k + 1) * bsz * cin]);
        }
        // dL/dx = sum_k Re(G_X[k] e^{+i theta}) = HW * inverse(G_X / c_k)
        let mut gx = Tensor4::zeros([bsz, cin, h, w]);
        let hw = (h * w) as f64;
        let mut s = vec![zero; h * m];
        for b in 0..bsz {
            for i in 0..cin {
                for (k, off) in self.offsets().enumerate() {
                    s[off] = g_x[(k * bsz + b) * cin + i] * (hw / self.fft.column_weight(off % m));
                }
                gx.plane_mut(b, i).copy_from_slice(&self.fft.inverse(&s, m));
            }
        }
        gx
    }
}

/// One-shot spectral convolution of `x` with `weights`.
pub fn spectral_conv(x: &Tensor4, weights: &[f64], cout: usize, num_modes: usize) -> Result<Tensor4> {
    let conv = SpectralConv::new(x.height(), x.width(), num_modes)?;
    let m = num_modes;
    if weights.len() != 2 * (2 * m - 1) * m * x.channels() * cout {
        return Err(Error::Shape("spectral weight size does not match channels and modes".into()));
    }
    Ok(conv.forward(weights, cout, x).0)
}

fn pad(x: &Tensor4, p: usize, ty: PaddingType) -> Tensor4 {
    if p == 0 {
        return x.clone();
    }
    let [bsz, c, h, w] = x.shape();
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let rows: Vec<Option<usize>> = (0..hp).map(|i| ty.source(i as isize - p as isize, h)).collect();
    let cols: Vec<Option<usize>> = (0..wp).map(|j| ty.source(j as isize - p as isize, w)).collect();
    let mut y = Tensor4::zeros([bsz, c, hp, wp]);
    for b in 0..bsz {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = y.plane_mut(b, ch);
            for (i, ri) in rows.iter().enumerate() {
                let Some(ri) = ri else { continue };
                for (j, cj) in cols.iter().enumerate() {
                    if let Some(cj) = cj {
                        dst[i * wp + j] = src[ri * w + cj];
                    }
                }
            }
        }
    }
    y
}

fn crop(x: &Tensor4, p: usize) -> Tensor4 {
    if p == 0 {
        return x.clone();
    }
    let [bsz, c, hp, wp] = x.shape();
    let (h, w) = (hp - 2 * p, wp - 2 * p);
    let mut y = Tensor4::zeros([bsz, c, h, w]);
    for b in 0..bsz {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = y.plane_mut(b, ch);
            for i in 0..h {
                dst[i * w..(i + 1) * w].copy_from_slice(&src[(i + p) * wp + p..(i + p) * wp + p + w]);
            }
        }
    }
    y
}

fn uncrop(g: &Tensor4, p: usize) -> Tensor4 {
    if p == 0 {
        return g.clone();
    }
    let [bsz, c, h, w] = g.shape();
    let wp = w + 2 * p;
    let mut y = Tensor4::zeros([bsz, c, h + 2 * p, wp]);
    for b in 0..bsz {
        for ch in 0..c {
            let src = g.plane(b, ch);
            let dst = y.plane_mut(b, ch);
            for i in 0..h {
                dst[(i + p) * wp + p..(i + p) * wp + p + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
        }
    }
    y
}

fn with_coords(x: &Tensor4) -> Tensor4 {
    let [bsz, c, h, w] = x.shape();
    let mut y = Tensor4::zeros([bsz, c + 2, h, w]);
    let lin = |i: usize, n: usize| if n > 1 { -1.0 + 2.0 * i as f64 / (n - 1) as f64 } else { 0.0 };
    for b in 0..bsz {
        let n = c * h * w;
        y.sample_mut(b)[..n].copy_from_slice(x.sample(b));
        let xs = y.plane_mut(b, c);
        for i in 0..h {
            for j in 0..w {
                xs[i * w + j] = lin(j, w);
            }
        }
        let ys = y.plane_mut(b, c + 1);
        for i in 0..h {
            for j in 0..w {
                ys[i * w + j] = lin(i, h);
            }
        }
    }
    y
}

fn region_mix(sig: u64, r: u8) -> u64 {
    (sig ^ r as u64).wrapping_mul(0x0000_0100_0000_01B3)
}

fn activate(z: &Tensor4, act: Activation, slope: f64, sig: &mut u64) -> Tensor4 {
    let track = !act.kinks().is_empty();
    let mut y = z.clone();
    for v in y.data_mut() {
        if track {
            *sig = region_mix(*sig, act.region(*v));
        }
        *v = act.apply(*v, slope);
    }
    y
}

/// `gy ⊙ act'(z)`; the slope gradient is added to `g_slope`.
fn activate_backward(z: &Tensor4, gy: &Tensor4, act: Activation, slope: f64, g_slope: Option<&mut f64>) -> Tensor4 {
    let mut g = gy.clone();
    let mut gs = 0.0;
    for (gv, &zv) in g.data_mut().iter_mut().zip(z.data()) {
        if act.has_slope() {
            gs += *gv * act.slope_derivative(zv);
        }
        *gv *= act.derivative(zv, slope);
    }
    if let Some(s) = g_slope {
        *s += gs;
    }
    g
}

struct BlockCache {
    input: Tensor4,
    spectra: Vec<Complex64>,
    pre: Tensor4,
}

/// Intermediates of one forward pass, consumed by [`backward`].
pub struct ForwardCache {
    fingerprint: u64,
    input_shape: [usize; 4],
    lift_in: Tensor4,
    lift_pre: Tensor4,
    blocks: Vec<BlockCache>,
    proj_in: Vec<Tensor4>,
    proj_pre: Vec<Tensor4>,
    out_in: Tensor4,
    regions: u64,
}

impl ForwardCache {
    /// Hash of which smooth piece every kinked activation input fell in.
    /// Two passes with equal signatures differentiate through the same
    /// piecewise-smooth branch.
    pub fn region_signature(&self) -> u64 {
        self.regions
    }
}

fn check_input(cfg: &FnoConfig, params: &ParamSet, input: &Tensor4) -> Result<()> {
    let [_, c, h, w] = input.shape();
    if c != cfg.in_channels {
        return Err(Error::Shape(format!("expected {} input channels, got {c}", cfg.in_channels)));
    }
    if h != w {
        return Err(Error::Shape(format!("spatial grid must be square, got {h}x{w}")));
    }
    let specs = param_specs(cfg);
    let ok = specs.len() == params.tensors.len()
        && specs.iter().zip(&params.tensors).all(|(s, t)| s.name == t.name && s.shape == t.shape && s.len() == t.data.len());
    if !ok {
        return Err(Error::Shape("parameter set does not match the architecture".into()));
    }
    Ok(())
}

fn run(cfg: &FnoConfig, params: &ParamSet, input: &Tensor4, keep: bool) -> Result<(Tensor4, Option<ForwardCache>)> {
    check_input(cfg, params, input)?;
    let lay = layout(cfg);
    let t = &params.tensors;
    let p = cfg.pad();
    let l = cfg.num_latent_feat;
    let mut sig = 0xCBF2_9CE4_8422_2325u64;

    let x = if cfg.coord_feat { with_coords(input) } else { input.clone() };
    let lift_in = pad(&x, p, cfg.padding_type);
    let (hp, wp) = (lift_in.height(), lift_in.width());
    let conv = SpectralConv::new(hp, wp, cfg.num_modes)?;

    let lift_slope = lay.lift_slope.map_or(0.0, |i| t[i].data[0]);
    let lift_pre = affine_forward(&t[lay.lift_w].data, &t[lay.lift_b].data, l, &lift_in);
    let mut h = activate(&lift_pre, cfg.lift_act, lift_slope, &mut sig);

    let mut blocks = Vec::new();
    for bi in &lay.blocks {
        let (spec_out, spectra) = conv.forward(&t[bi.spectral].data, l, &h);
        let mut pre = affine_forward(&t[bi.weight].data, &t[bi.bias].data, l, &h);
        pre.data_mut().iter_mut().zip(spec_out.data()).for_each(|(a, b)| *a += b);
        let next = activate(&pre, cfg.block_act, 0.0, &mut sig);
        if keep {
            blocks.push(BlockCache { input: std::mem::replace(&mut h, next), spectra, pre });
        } else {
            h = next;
        }
    }

    let mut proj_in = Vec::new();
    let mut proj_pre = Vec::new();
    for pj in &lay.proj {
        let slope = pj.slope.map_or(0.0, |i| t[i].data[0]);
        let pre = affine_forward(&t[pj.weight].data, &t[pj.bias].data, cfg.proj_size, &h);
        let next = activate(&pre, cfg.proj_act, slope, &mut sig);
        if keep {
            proj_in.push(std::mem::replace(&mut h, next));
            proj_pre.push(pre);
        } else {
            h = next;
        }
    }
    let out = affine_forward(&t[lay.out_w].data, &t[lay.out_b].data, cfg.out_channels, &h);
    let y = crop(&out, p);
    let cache = keep.then(|| ForwardCache {
        fingerprint: params.fingerprint(),
        input_shape: input.shape(),
        lift_in,
        lift_pre,
        blocks,
        proj_in,
        proj_pre,
        out_in: h,
        regions: sig,
    });
    Ok((y, cache))
}

/// Forward pass retaining everything [`backward`] needs.
pub fn forward(cfg: &FnoConfig, params: &ParamSet, input: &Tensor4) -> Result<(Tensor4, ForwardCache)> {
    let (y, cache) = run(cfg, params, input, true)?;
    Ok((y, cache.expect("cache requested")))
}

/// Forward pass without a cache.
pub fn predict(cfg: &FnoConfig, params: &ParamSet, input: &Tensor4) -> Result<Tensor4> {
    Ok(run(cfg, params, input, false)?.0)
}

/// Reverse pass: gradients of a scalar loss with respect to every
/// parameter, given `dL/d prediction`.
pub fn backward(cfg: &FnoConfig, params: &ParamSet, cache: &ForwardCache, grad_pred: &Tensor4) -> Result<ParamSet> {
    if cache.fingerprint != params.fingerprint() {
        return Err(Error::StaleCache("parameters changed since the forward pass".into()));
    }
    let [bsz, _, h, w] = cache.input_shape;
    if grad_pred.shape() != [bsz, cfg.out_channels, h, w] {
        return Err(Error::Shape(format!(
            "gradient shape {:?} does not match prediction {:?}",
            grad_pred.shape(),
            [bsz, cfg.out_channels, h, w]
        )));
    }
    let lay = layout(cfg);
    let t = &params.tensors;
    let mut grads = params.zeros_like();
    let p = cfg.pad();
    let l = cfg.num_latent_feat;

    let g_out = uncrop(grad_pred, p);
    let mut g = {
        let (gw, rest) = split_two(&mut grads, lay.out_w, lay.out_b);
        affine_backward(&t[lay.out_w].data, cfg.out_channels, &cache.out_in, &g_out, gw, rest, true).unwrap()
    };

    for (j, pj) in lay.proj.iter().enumerate().rev() {
        let slope = pj.slope.map_or(0.0, |i| t[i].data[0]);
        let mut gs = 0.0;
        let gz = activate_backward(&cache.proj_pre[j], &g, cfg.proj_act, slope, Some(&mut gs));
        if let Some(i) = pj.slope {
            grads.tensors[i].data[0] += gs;
        }
        let (gw, gb) = split_two(&mut grads, pj.weight, pj.bias);
        g = affine_backward(&t[pj.weight].data, cfg.proj_size, &cache.proj_in[j], &gz, gw, gb, true).unwrap();
    }

    let (hp, wp) = (cache.lift_in.height(), cache.lift_in.width());
    let conv = SpectralConv::new(hp, wp, cfg.num_modes)?;
    for (bi, bc) in lay.blocks.iter().zip(&cache.blocks).rev() {
        let gz = activate_backward(&bc.pre, &g, cfg.block_act, 0.0, None);
        let mut gx = conv.backward(&t[bi.spectral].data, &bc.spectra, &gz, &mut grads.tensors[bi.spectral].data, l);
        let (gw, gb) = split_two(&mut grads, bi.weight, bi.bias);
        let gx2 = affine_backward(&t[bi.weight].data, l, &bc.input, &gz, gw, gb, true).unwrap();
        gx.data_mut().iter_mut().zip(gx2.data()).for_each(|(a, b)| *a += b);
        g = gx;
    }

    let lift_slope = lay.lift_slope.map_or(0.0, |i| t[i].data[0]);
    let mut gs = 0.0;
    let gz = activate_backward(&cache.lift_pre, &g, cfg.lift_act, lift_slope, Some(&mut gs));
    if let Some(i) = lay.lift_slope {
        grads.tensors[i].data[0] += gs;
    }
    let (gw, gb) = split_two(&mut grads, lay.lift_w, lay.lift_b);
    affine_backward(&t[lay.lift_w].data, l, &cache.lift_in, &gz, gw, gb, false);
    Ok(grads)
}

/// Mutable borrows of two distinct tensors (`a < b`).
fn split_two(grads: &mut ParamSet, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a < b);
    let (lo, hi) = grads.tensors.split_at_mut(b);
    (&mut lo[a].data, &mut hi[0].data)
}

/// Shape of the padded grid the spectral blocks operate on.
pub fn padded_grid(cfg: &FnoConfig, h: usize, w: usize) -> (usize, usize) {
    (h + 2 * cfg.pad(), w + 2 * cfg.pad())
}
