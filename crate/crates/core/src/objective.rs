//! Penalized calibration loss: L1 price fit plus
//! `λ · [(∂T F)⁻, (∂²kk F)⁻, (dup − a_high)⁺ + (a_low − dup)⁺]`
//! averaged over the training points, and its exact parameter gradient.
//!
//! All derivatives entering the penalties are in raw `(T, k)` units; the
//! network's scaled-input sensitivities are converted with the
//! [`ScaleFactors`] of the chart it was trained on.

use serde::{Deserialize, Serialize};

use crate::curves::ScaleFactors;
use crate::error::{Error, Result};
use crate::exec::{pairwise_sum, Exec};
use crate::network::{EvalResult, NetParams, Tape};

/// Default floor for the Dupire denominator `k² ∂²kk F`, raw units.
pub const DEFAULT_GUARD: f64 = 1e-8;

/// Penalty multipliers `(λ1, λ2, λ3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyWeights {
    pub calendar: f64,
    pub butterfly: f64,
    pub dupire: f64,
}

impl PenaltyWeights {
    pub const ZERO: Self = Self {
        calendar: 0.0,
        butterfly: 0.0,
        dupire: 0.0,
    };

    pub fn new(calendar: f64, butterfly: f64, dupire: f64) -> Result<Self> {
        let w = Self {
            calendar,
            butterfly,
            dupire,
        };
        if [calendar, butterfly, dupire].iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::InvalidInput(format!("penalty weights must be >= 0: {w:?}")));
        }
        Ok(w)
    }
}

/// Bounds `[a_low, a_high]` on the Dupire half-variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfVarianceBand {
    pub low: f64,
    pub high: f64,
}

impl HalfVarianceBand {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low > 0.0 && high > low && high.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "half-variance band needs 0 < low < high, got ({low}, {high})"
            )));
        }
        Ok(Self { low, high })
    }

    /// Band of half-variances for volatilities in `[sigma_low, sigma_high]`.
    pub fn from_vols(sigma_low: f64, sigma_high: f64) -> Result<Self> {
        Self::new(sigma_low * sigma_low / 2.0, sigma_high * sigma_high / 2.0)
    }
}

impl Default for HalfVarianceBand {
    /// Local volatilities between 5% and 40%.
    fn default() -> Self {
        Self {
            low: 0.05 * 0.05 / 2.0,
            high: 0.4 * 0.4 / 2.0,
        }
    }
}

/// A location where shape penalties are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySite {
    /// Scaled maturity `T'`.
    pub t: f64,
    /// Scaled forward strike `k'`.
    pub k: f64,
    /// Raw maturity.
    pub maturity: f64,
    /// Raw forward strike.
    pub strike: f64,
}

impl PenaltySite {
    /// Payoff rows sit at `T = 0`; the Dupire term is not applied there.
    pub fn is_payoff_row(&self) -> bool {
        self.maturity == 0.0
    }
}

/// One observation in scaled coordinates with its forward-price target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingPoint {
    pub site: PenaltySite,
    pub target: f64,
}

/// Loss value split into its parts; `total = fit_l1 + λ · pen`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub fit_l1: f64,
    pub pen_calendar: f64,
    pub pen_butterfly: f64,
    pub pen_dupire: f64,
    pub total: f64,
    /// Sites where the Dupire denominator guard was active.
    pub guard_hits: usize,
}

/// Dupire half-variance at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfVariance {
    pub dup: f64,
    /// The denominator was below the guard and was replaced by it.
    pub guarded: bool,
}

/// `dup = ∂T F / (k² ∂²kk F)` from scaled-unit sensitivities, with the
/// denominator floored at `guard`.
pub fn dupire_half_variance(eval: &EvalResult, strike: f64, factors: ScaleFactors, guard: f64) -> HalfVariance {
    let num = factors.c_t * eval.d_t;
    let den = strike * strike * factors.c_k * factors.c_k * eval.d_kk;
    let guarded = den < guard;
    HalfVariance {
        dup: num / if guarded { guard } else { den },
        guarded,
    }
}

/// Penalty vector `φ` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Penalties {
    pub calendar: f64,
    pub butterfly: f64,
    pub dupire: f64,
    pub guarded: bool,
}

pub fn penalty_vector(
    eval: &EvalResult,
    strike: f64,
    factors: ScaleFactors,
    band: HalfVarianceBand,
    guard: f64,
) -> Penalties {
    let hv = dupire_half_variance(eval, strike, factors, guard);
    Penalties {
        calendar: (-factors.c_t * eval.d_t).max(0.0),
        butterfly: (-factors.c_k * factors.c_k * eval.d_kk).max(0.0),
        dupire: (hv.dup - band.high).max(0.0) + (band.low - hv.dup).max(0.0),
        guarded: hv.guarded,
    }
}

/// Everything the loss needs besides the parameters and data.
#[derive(Debug, Clone)]
pub struct Objective {
    pub weights: PenaltyWeights,
    pub band: HalfVarianceBand,
    pub factors: ScaleFactors,
    pub guard: f64,
    /// Extra penalty-only sites (for example a uniform grid over `[0,1]²`).
    pub aux_sites: Vec<PenaltySite>,
    pub exec: Exec,
}

impl Objective {
    pub fn new(weights: PenaltyWeights, band: HalfVarianceBand, factors: ScaleFactors) -> Self {
        Self {
            weights,
            band,
            factors,
            guard: DEFAULT_GUARD,
            aux_sites: Vec::new(),
            exec: Exec::default(),
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    fn site_penalties(&self, eval: &EvalResult, site: &PenaltySite) -> Penalties {
        let mut p = penalty_vector(eval, site.strike, self.factors, self.band, self.guard);
        if site.is_payoff_row() {
            p.dupire = 0.0;
            p.guarded = false;
        }
        p
    }

    /// Adjoints of `(F, ∂T, ∂k, ∂²kk)` for `weight · λ·φ` at a site.
    fn penalty_seed(&self, eval: &EvalResult, site: &PenaltySite, weight: f64) -> EvalResult {
        let f = self.factors;
        let lam = self.weights;
        let mut g_t = 0.0;
        let mut g_kk = 0.0;
        if -f.c_t * eval.d_t > 0.0 {
            g_t -= lam.calendar * f.c_t;
        }
        if -f.c_k * f.c_k * eval.d_kk > 0.0 {
            g_kk -= lam.butterfly * f.c_k * f.c_k;
        }
        if lam.dupire != 0.0 && !site.is_payoff_row() {
            let num = f.c_t * eval.d_t;
            let den_scale = site.strike * site.strike * f.c_k * f.c_k;
            let den = den_scale * eval.d_kk;
            let guarded = den < self.guard;
            let dup = num / if guarded { self.guard } else { den };
            let slope = if dup > self.band.high {
                1.0
            } else if dup < self.band.low {
                -1.0
            } else {
                0.0
            };
            if slope != 0.0 {
                if guarded {
                    g_t += lam.dupire * slope * f.c_t / self.guard;
                } else {
                    g_t += lam.dupire * slope * f.c_t / den;
                    g_kk -= lam.dupire * slope * num * den_scale / (den * den);
                }
            }
        }
        EvalResult {
            value: 0.0,
            d_t: weight * g_t,
            d_k: 0.0,
            d_kk: weight * g_kk,
        }
    }

    /// Loss breakdown without the gradient.
    pub fn loss(&self, params: &NetParams, points: &[TrainingPoint]) -> Result<LossBreakdown> {
        self.evaluate(params, points, false).map(|(b, _)| b)
    }

    /// Loss breakdown and exact gradient with respect to every parameter.
    /// At the kinks of `|·|`, `(·)⁺` and `(·)⁻` the derivative is taken as 0.
    pub fn loss_and_gradient(&self, params: &NetParams, points: &[TrainingPoint]) -> Result<(LossBreakdown, Vec<f64>)> {
        self.evaluate(params, points, true)
            .map(|(b, g)| (b, g.expect("gradient requested")))
    }

    fn evaluate(
        &self,
        params: &NetParams,
        points: &[TrainingPoint],
        with_grad: bool,
    ) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
        if points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n_params = params.num_params();
        let w_train = 1.0 / points.len() as f64;
        let w_aux = if self.aux_sites.is_empty() {
            0.0
        } else {
            1.0 / self.aux_sites.len() as f64
        };
        // Training points and aux sites share one work list so chunking is fixed.
        let items: Vec<(PenaltySite, Option<f64>, f64)> = points
            .iter()
            .map(|p| (p.site, Some(p.target), w_train))
            .chain(self.aux_sites.iter().map(|s| (*s, None, w_aux)))
            .collect();

        let partials = self.exec.map_chunks(&items, CHUNK, |_, chunk| {
            let mut tape = Tape::new(params.layout());
            let mut grad = if with_grad { vec![0.0; n_params] } else { Vec::new() };
            let mut acc = [0.0f64; 4];
            let mut hits = 0usize;
            for (site, target, weight) in chunk {
                let eval = params.forward_tape(site.t, site.k, &mut tape);
                let pen = self.site_penalties(&eval, site);
                hits += pen.guarded as usize;
                acc[1] += weight * pen.calendar;
                acc[2] += weight * pen.butterfly;
                acc[3] += weight * pen.dupire;
                let mut seed = if with_grad {
                    self.penalty_seed(&eval, site, *weight)
                } else {
                    EvalResult::default()
                };
                if let Some(target) = target {
                    let err = eval.value - target;
                    acc[0] += weight * err.abs();
                    seed.value = weight * sign0(err);
                }
                if with_grad && (seed.value != 0.0 || seed.d_t != 0.0 || seed.d_kk != 0.0) {
                    params.backward_tape(site.t, site.k, &mut tape, &seed, &mut grad);
                }
            }
            (acc, hits, grad)
        });

        let part = |i: usize| pairwise_sum(&partials.iter().map(|p| p.0[i]).collect::<Vec<_>>());
        let lam = self.weights;
        let mut b = LossBreakdown {
            fit_l1: part(0),
            pen_calendar: part(1),
            pen_butterfly: part(2),
            pen_dupire: part(3),
            total: 0.0,
            guard_hits: partials.iter().map(|p| p.1).sum(),
        };
        b.total = b.fit_l1 + lam.calendar * b.pen_calendar + lam.butterfly * b.pen_butterfly + lam.dupire * b.pen_dupire;

        let grad = with_grad.then(|| {
            let mut g = vec![0.0; n_params];
            for (_, _, pg) in &partials {
                g.iter_mut().zip(pg).for_each(|(a, b)| *a += b);
            }
            g
        });
        Ok((b, grad))
    }
}

const CHUNK: usize = 16;

#[inline]
fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
