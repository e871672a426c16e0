//! Real 2-D DFT on the half spectrum, backed by `rustfft`.
//!
//! Forward transforms are unnormalized; the inverse scales by `1/(H*W)`.
//! Spectra are stored row-major as `H × ncols` where `ncols <= W/2 + 1`
//! keeps only the lowest column frequencies (columns beyond `ncols` are
//! treated as zero by the inverse).
//!
//! The inverse is the real-linear map
//! `x[h,w] = 1/(HW) * sum_k c_k * Re(Y[k] * exp(2 pi i (kh h/H + kw w/W)))`
//! with `c_k = 1` on the DC and Nyquist columns and 2 elsewhere, i.e. the
//! imaginary parts of those two columns are discarded.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

#[derive(Clone)]
pub struct Fft2 {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(h: usize, w: usize) -> Self {
        PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            Fft2 {
                h,
                w,
                row_fwd: p.plan_fft_forward(w),
                row_inv: p.plan_fft_inverse(w),
                col_fwd: p.plan_fft_forward(h),
                col_inv: p.plan_fft_inverse(h),
            }
        })
    }

    pub fn half_width(&self) -> usize {
        self.w / 2 + 1
    }

    /// Weight of column `k` in the inverse (1 for DC/Nyquist, else 2).
    pub fn column_weight(&self, k: usize) -> f64 {
        if k == 0 || (self.w % 2 == 0 && k == self.w / 2) {
            1.0
        } else {
            2.0
        }
    }

    /// Forward transform keeping columns `0..ncols`.
    pub fn forward(&self, x: &[f64], ncols: usize) -> Vec<Complex64> {
        let (h, w) = (self.h, self.w);
        assert_eq!(x.len(), h * w);
        assert!(ncols <= self.half_width());
        let mut out = vec![Complex64::new(0.0, 0.0); h * ncols];
        let mut row = vec![Complex64::new(0.0, 0.0); w];
        for r in 0..h {
            for (dst, &v) in row.iter_mut().zip(&x[r * w..(r + 1) * w]) {
                *dst = Complex64::new(v, 0.0);
            }
            self.row_fwd.process(&mut row);
            out[r * ncols..(r + 1) * ncols].copy_from_slice(&row[..ncols]);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); h];
        for k in 0..ncols {
            for r in 0..h {
                col[r] = out[r * ncols + k];
            }
            self.col_fwd.process(&mut col);
            for r in 0..h {
                out[r * ncols + k] = col[r];
            }
        }
        out
    }

    /// Inverse of an `H × ncols` half spectrum.
    pub fn inverse(&self, y: &[Complex64], ncols: usize) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        assert_eq!(y.len(), h * ncols);
        assert!(ncols <= self.half_width());
        let mut z = y.to_vec();
        let mut col = vec![Complex64::new(0.0, 0.0); h];
        for k in 0..ncols {
            for r in 0..h {
                col[r] = z[r * ncols + k];
            }
            self.col_inv.process(&mut col);
            for r in 0..h {
                z[r * ncols + k] = col[r];
            }
        }
        let scale = 1.0 / (h * w) as f64;
        let mut out = vec![0.0; h * w];
        let mut row = vec![Complex64::new(0.0, 0.0); w];
        for r in 0..h {
            row.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for k in 0..ncols {
                let v = z[r * ncols + k];
                if self.column_weight(k) == 1.0 {
                    row[k] = Complex64::new(v.re, 0.0);
                } else {
                    row[k] = v;
                    row[w - k] = v.conj();
                }
            }
            self.row_inv.process(&mut row);
            for (dst, v) in out[r * w..(r + 1) * w].iter_mut().zip(&row) {
                *dst = v.re * scale;
            }
        }
        out
    }
}

/// Full half-spectrum forward transform, `H × (W/2 + 1)`.
pub fn rfft2(x: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let f = Fft2::new(h, w);
    f.forward(x, f.half_width())
}

pub fn irfft2(y: &[Complex64], h: usize, w: usize) -> Vec<f64> {
    let f = Fft2::new(h, w);
    f.inverse(y, f.half_width())
}
