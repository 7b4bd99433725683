//! Scalar activations with derivatives up to third order.
//!
//! Third derivatives are needed because the loss depends on `∂²F/∂k²`,
//! and its parameter gradient differentiates that once more.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Softplus,
    Sigmoid,
    Identity,
}

/// `ς(x)` and its first three derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActEval {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

/// Logistic function, stable for large `|x|`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`; switches to `x + ln(1 + e^-x)` above 30.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Activation {
    #[inline]
    pub fn value(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => softplus(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn eval(self, x: f64) -> ActEval {
        match self {
            Activation::Softplus => {
                let s = sigmoid(x);
                let sc = sigmoid(-x);
                let p = s * sc;
                ActEval {
                    value: softplus(x),
                    d1: s,
                    d2: p,
                    d3: p * (sc - s),
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                let sc = sigmoid(-x);
                let p = s * sc;
                ActEval {
                    value: s,
                    d1: p,
                    d2: p * (sc - s),
                    d3: p * (1.0 - 6.0 * p),
                }
            }
            Activation::Identity => ActEval {
                value: x,
                d1: 1.0,
                d2: 0.0,
                d3: 0.0,
            },
        }
    }
}
