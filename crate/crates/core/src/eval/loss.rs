//! Composite training loss `alpha * MSE + (1 - alpha) * NegACC`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fno::Tensor4;

pub const ACC_EPS: f64 = 1e-12;

/// Denominator of the anomaly correlation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccForm {
    /// `sum(ab) / sqrt(sum(a^2) sum(b^2))`.
    #[default]
    Pearson,
    /// `sum(ab) / sum(|ab|)`.
    Printed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss: f64,
    pub mse: f64,
    pub neg_acc: f64,
}

/// Loss, its gradient with respect to `pred`, and both terms.
///
/// `climatology` is one `C × H × W` field broadcast over the batch; `mask`
/// holds 1.0 on basin pixels and 0.0 elsewhere. Both terms pool over
/// batch, channels and basin pixels.
pub fn composite_loss(
    pred: &Tensor4,
    target: &Tensor4,
    climatology: &[f64],
    mask: &[f64],
    alpha: f64,
    form: AccForm,
) -> Result<(LossBreakdown, Tensor4)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Alpha(alpha));
    }
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let [bsz, c, h, w] = pred.shape();
    let hw = h * w;
    if climatology.len() != c * hw || mask.len() != hw {
        return Err(Error::Shape("climatology or mask does not match the grid".into()));
    }
    let wet = mask.iter().sum::<f64>();
    let n = (bsz * c) as f64 * wet;
    let (p, t) = (pred.data(), target.data());
    let idx = |i: usize| (i % (c * hw), i % hw);

    let mut sq = 0.0;
    let (mut sab, mut saa, mut sbb, mut sabs) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..p.len() {
        let (ci, pi) = idx(i);
        let m = mask[pi];
        if m == 0.0 {
            continue;
        }
        let d = p[i] - t[i];
        sq += d * d;
        let a = p[i] - climatology[ci];
        let b = t[i] - climatology[ci];
        sab += a * b;
        saa += a * a;
        sbb += b * b;
        sabs += (a * b).abs();
    }
    let mse = if n > 0.0 { sq / n } else { 0.0 };
    let (acc, denom) = match form {
        AccForm::Pearson => {
            let d = (saa * sbb + ACC_EPS).sqrt();
            (sab / d, d)
        }
        AccForm::Printed => {
            let d = sabs + ACC_EPS;
            (sab / d, d)
        }
    };

    let mut grad = Tensor4::zeros(pred.shape());
    let g = grad.data_mut();
    for i in 0..p.len() {
        let (ci, pi) = idx(i);
        if mask[pi] == 0.0 {
            continue;
        }
        let a = p[i] - climatology[ci];
        let b = t[i] - climatology[ci];
        let d_mse = if n > 0.0 { 2.0 * (p[i] - t[i]) / n } else { 0.0 };
        let d_acc = match form {
            AccForm::Pearson => b / denom - sab * sbb * a / denom.powi(3),
            AccForm::Printed => b / denom - sab * a.signum() * b.abs() / (denom * denom),
        };
        g[i] = alpha * d_mse - (1.0 - alpha) * d_acc;
    }
    let neg_acc = -acc;
    Ok((LossBreakdown { loss: alpha * mse + (1.0 - alpha) * neg_acc, mse, neg_acc }, grad))
}
