//! Rate and dividend term structures, quote types, and the coordinate
//! changes between raw put prices and forward-coordinate prices.
//!
//! With `F = exp(∫q) P` and `k = K exp(-∫(r - q))` the Dupire equation loses
//! its drift terms and reads `∂T F = ½ σ² k² ∂²kk F`. The network is trained
//! on `F` over a rescaled chart `[0,1]²` of `(T, k)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-constant per-annum rate curve. `values[i]` applies on
/// `[knot_times[i], knot_times[i+1])`; the last value extends to infinity
/// and the first one extends back to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermStructure {
    knot_times: Vec<f64>,
    values: Vec<f64>,
}

impl TermStructure {
    pub fn new(knot_times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || knot_times.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "term structure needs matching non-empty knots/values ({} vs {})",
                knot_times.len(),
                values.len()
            )));
        }
        if knot_times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidInput("knot times must be finite and >= 0".into()));
        }
        if knot_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("knot times must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("rates must be finite".into()));
        }
        Ok(Self { knot_times, values })
    }

    pub fn flat(rate: f64) -> Self {
        Self {
            knot_times: vec![0.0],
            values: vec![rate],
        }
    }

    pub fn zero() -> Self {
        Self::flat(0.0)
    }

    pub fn knot_times(&self) -> &[f64] {
        &self.knot_times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Instantaneous rate at `t`.
    pub fn rate_at(&self, t: f64) -> f64 {
        let idx = self.knot_times.partition_point(|&k| k <= t);
        self.values[idx.saturating_sub(1)]
    }

    /// Exact integral of the curve over `[t0, t1]`.
    pub fn integrate(&self, t0: f64, t1: f64) -> Result<f64> {
        if t1 < t0 || t0 < 0.0 || !t0.is_finite() || !t1.is_finite() {
            return Err(Error::InvalidInterval { t0, t1 });
        }
        Ok(self.integral_unchecked(t0, t1))
    }

    pub(crate) fn integral_unchecked(&self, t0: f64, t1: f64) -> f64 {
        if t1 <= t0 {
            return 0.0;
        }
        let n = self.values.len();
        let mut total = 0.0;
        for i in 0..n {
            let lo = if i == 0 { f64::NEG_INFINITY } else { self.knot_times[i] };
            let hi = if i + 1 < n { self.knot_times[i + 1] } else { f64::INFINITY };
            let a = t0.max(lo);
            let b = t1.min(hi);
            if b > a {
                total += self.values[i] * (b - a);
            }
        }
        total
    }
}

/// One observed put in raw units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketQuote {
    pub maturity: f64,
    pub strike: f64,
    pub price: f64,
}

impl MarketQuote {
    pub fn new(maturity: f64, strike: f64, price: f64) -> Result<Self> {
        let q = Self { maturity, strike, price };
        q.validate_basic()?;
        Ok(q)
    }

    fn validate_basic(&self) -> Result<()> {
        if !(self.maturity.is_finite() && self.maturity >= 0.0) {
            return Err(Error::InvalidInput(format!("maturity {} must be >= 0", self.maturity)));
        }
        if !(self.strike.is_finite() && self.strike > 0.0) {
            return Err(Error::InvalidInput(format!("strike {} must be > 0", self.strike)));
        }
        if !(self.price.is_finite() && self.price >= 0.0) {
            return Err(Error::InvalidInput(format!("price {} must be >= 0", self.price)));
        }
        Ok(())
    }

    /// Checks the basic fields and the sanity bound `P <= K exp(-∫r)`.
    pub fn validate(&self, rates: &TermStructure) -> Result<()> {
        self.validate_basic()?;
        let bound = self.strike * (-rates.integrate(0.0, self.maturity)?).exp();
        if self.price > bound * (1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "put price {} exceeds discounted strike {}",
                self.price, bound
            )));
        }
        Ok(())
    }
}

/// A quote in forward coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardQuote {
    pub maturity: f64,
    pub strike: f64,
    pub price: f64,
}

/// Map a raw quote to forward coordinates: `F = exp(∫q) P`, `k = K exp(-∫(r-q))`.
pub fn to_forward(q: &MarketQuote, rates: &TermStructure, divs: &TermStructure) -> Result<ForwardQuote> {
    q.validate_basic()?;
    let iq = divs.integrate(0.0, q.maturity)?;
    let ir = rates.integrate(0.0, q.maturity)?;
    Ok(ForwardQuote {
        maturity: q.maturity,
        strike: q.strike * (iq - ir).exp(),
        price: q.price * iq.exp(),
    })
}

/// Inverse of [`to_forward`].
pub fn from_forward(fq: &ForwardQuote, rates: &TermStructure, divs: &TermStructure) -> Result<MarketQuote> {
    let iq = divs.integrate(0.0, fq.maturity)?;
    let ir = rates.integrate(0.0, fq.maturity)?;
    MarketQuote::new(fq.maturity, fq.strike * (ir - iq).exp(), fq.price * (-iq).exp())
}

/// Forward strike for a raw strike at maturity `t`.
pub fn forward_strike(strike: f64, t: f64, rates: &TermStructure, divs: &TermStructure) -> f64 {
    strike * (divs.integral_unchecked(0.0, t) - rates.integral_unchecked(0.0, t)).exp()
}

/// Affine chart from a rectangle of `(T, k)` onto `[0,1]²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingBox {
    pub t_min: f64,
    pub t_max: f64,
    pub k_min: f64,
    pub k_max: f64,
}

impl ScalingBox {
    pub fn new(t_min: f64, t_max: f64, k_min: f64, k_max: f64) -> Result<Self> {
        let finite = [t_min, t_max, k_min, k_max].iter().all(|v| v.is_finite());
        if !finite || t_max <= t_min || k_max <= k_min {
            return Err(Error::DegenerateBox(format!(
                "T in [{t_min}, {t_max}], k in [{k_min}, {k_max}]"
            )));
        }
        Ok(Self { t_min, t_max, k_min, k_max })
    }

    pub fn unit() -> Self {
        Self {
            t_min: 0.0,
            t_max: 1.0,
            k_min: 0.0,
            k_max: 1.0,
        }
    }

    /// The hull of the quotes' maturities and forward strikes.
    pub fn fit(quotes: &[ForwardQuote]) -> Result<Self> {
        if quotes.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (mut t_min, mut t_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut k_min, mut k_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for q in quotes {
            t_min = t_min.min(q.maturity);
            t_max = t_max.max(q.maturity);
            k_min = k_min.min(q.strike);
            k_max = k_max.max(q.strike);
        }
        Self::new(t_min, t_max, k_min, k_max)
    }

    pub fn scale(&self, t: f64, k: f64) -> (f64, f64) {
        (
            (t - self.t_min) / (self.t_max - self.t_min),
            (k - self.k_min) / (self.k_max - self.k_min),
        )
    }

    pub fn unscale(&self, ts: f64, ks: f64) -> (f64, f64) {
        (
            self.t_min + ts * (self.t_max - self.t_min),
            self.k_min + ks * (self.k_max - self.k_min),
        )
    }

    /// Chain-rule factors `(cT, ck)`: `∂T = cT ∂T'`, `∂²kk = ck² ∂²k'k'`.
    pub fn derivative_factors(&self) -> ScaleFactors {
        ScaleFactors {
            c_t: 1.0 / (self.t_max - self.t_min),
            c_k: 1.0 / (self.k_max - self.k_min),
        }
    }
}

/// Derivative scale factors of a [`ScalingBox`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleFactors {
    pub c_t: f64,
    pub c_k: f64,
}

impl ScaleFactors {
    pub const UNIT: ScaleFactors = ScaleFactors { c_t: 1.0, c_k: 1.0 };
}
