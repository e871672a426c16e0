//! Elementwise activations with analytic derivatives.
//!
//! Definitions follow the PyTorch defaults: leaky_relu slope 0.01, elu
//! alpha 1, softplus beta 1 with linear cutoff at 20, softshrink lambda 0.5,
//! hardtanh on [-1, 1], threshold(0, 0). `prelu` has one learnable slope
//! per layer.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const ACTIVATION_NAMES: [&str; 19] = [
    "relu",
    "leaky_relu",
    "prelu",
    "relu6",
    "elu",
    "selu",
    "silu",
    "gelu",
    "sigmoid",
    "logsigmoid",
    "softplus",
    "softshrink",
    "softsign",
    "tanh",
    "tanhshrink",
    "threshold",
    "hardtanh",
    "identity",
    "squareplus",
];

pub const PRELU_INIT: f64 = 0.25;
const LEAKY_SLOPE: f64 = 0.01;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
const SELU_SCALE: f64 = 1.050_700_987_355_480_5;
const SOFTPLUS_CUTOFF: f64 = 20.0;
const SHRINK: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Prelu,
    Relu6,
    Elu,
    Selu,
    Silu,
    Gelu,
    Sigmoid,
    Logsigmoid,
    Softplus,
    Softshrink,
    Softsign,
    Tanh,
    Tanhshrink,
    Threshold,
    Hardtanh,
    Identity,
    Squareplus,
}

pub const ALL_ACTIVATIONS: [Activation; 19] = [
    Activation::Relu,
    Activation::LeakyRelu,
    Activation::Prelu,
    Activation::Relu6,
    Activation::Elu,
    Activation::Selu,
    Activation::Silu,
    Activation::Gelu,
    Activation::Sigmoid,
    Activation::Logsigmoid,
    Activation::Softplus,
    Activation::Softshrink,
    Activation::Softsign,
    Activation::Tanh,
    Activation::Tanhshrink,
    Activation::Threshold,
    Activation::Hardtanh,
    Activation::Identity,
    Activation::Squareplus,
];

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

impl Activation {
    pub fn name(self) -> &'static str {
        ACTIVATION_NAMES[ALL_ACTIVATIONS.iter().position(|&a| a == self).unwrap()]
    }

    pub fn has_slope(self) -> bool {
        self == Activation::Prelu
    }

    /// Points where the derivative is discontinuous.
    pub fn kinks(self) -> &'static [f64] {
        use Activation::*;
        match self {
            Relu | LeakyRelu | Prelu | Threshold | Selu => &[0.0],
            Relu6 => &[0.0, 6.0],
            Softshrink => &[-SHRINK, SHRINK],
            Hardtanh => &[-1.0, 1.0],
            Softplus => &[SOFTPLUS_CUTOFF],
            _ => &[],
        }
    }

    /// Index of the smooth piece containing `x`.
    pub fn region(self, x: f64) -> u8 {
        self.kinks().iter().filter(|&&k| x > k).count() as u8
    }

    /// `slope` is only read by `prelu`.
    pub fn apply(self, x: f64, slope: f64) -> f64 {
        use Activation::*;
        match self {
            Relu | Threshold => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Prelu => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Relu6 => x.clamp(0.0, 6.0),
            Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Selu => {
                if x > 0.0 {
                    SELU_SCALE * x
                } else {
                    SELU_SCALE * SELU_ALPHA * x.exp_m1()
                }
            }
            Silu => x * sigmoid(x),
            Gelu => x * normal_cdf(x),
            Sigmoid => sigmoid(x),
            Logsigmoid => x.min(0.0) - (-x.abs()).exp().ln_1p(),
            Softplus => {
                if x > SOFTPLUS_CUTOFF {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
            Softshrink => {
                if x > SHRINK {
                    x - SHRINK
                } else if x < -SHRINK {
                    x + SHRINK
                } else {
                    0.0
                }
            }
            Softsign => x / (1.0 + x.abs()),
            Tanh => x.tanh(),
            Tanhshrink => x - x.tanh(),
            Hardtanh => x.clamp(-1.0, 1.0),
            Identity => x,
            Squareplus => 0.5 * (x + (x * x + 4.0).sqrt()),
        }
    }

    /// d apply / dx.
    pub fn derivative(self, x: f64, slope: f64) -> f64 {
        use Activation::*;
        let step = |c: bool| if c { 1.0 } else { 0.0 };
        match self {
            Relu | Threshold => step(x > 0.0),
            LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Prelu => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Relu6 => step(x > 0.0 && x < 6.0),
            Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Selu => {
                if x > 0.0 {
                    SELU_SCALE
                } else {
                    SELU_SCALE * SELU_ALPHA * x.exp()
                }
            }
            Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Gelu => normal_cdf(x) + x * normal_pdf(x),
            Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Logsigmoid => sigmoid(-x),
            Softplus => {
                if x > SOFTPLUS_CUTOFF {
                    1.0
                } else {
                    sigmoid(x)
                }
            }
            Softshrink => step(x.abs() > SHRINK),
            Softsign => 1.0 / (1.0 + x.abs()).powi(2),
            Tanh => 1.0 - x.tanh().powi(2),
            Tanhshrink => x.tanh().powi(2),
            Hardtanh => step(x > -1.0 && x < 1.0),
            Identity => 1.0,
            Squareplus => 0.5 * (1.0 + x / (x * x + 4.0).sqrt()),
        }
    }

    /// d apply / d slope (non-zero only for `prelu`).
    pub fn slope_derivative(self, x: f64) -> f64 {
        if self == Activation::Prelu && x <= 0.0 {
            x
        } else {
            0.0
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        ACTIVATION_NAMES
            .iter()
            .position(|&n| n == s)
            .map(|i| ALL_ACTIVATIONS[i])
            .ok_or_else(|| Error::UnknownActivation(s.to_string()))
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
