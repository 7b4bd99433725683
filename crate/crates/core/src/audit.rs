//! Post-fit diagnostics: shape violations, error metrics, surface extraction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curves::{forward_strike, MarketQuote, ScalingBox, TermStructure};
use crate::error::{Error, Result};
use crate::exec::{pairwise_sum, Exec};
use crate::network::NetParams;
use crate::objective::dupire_half_variance;
use crate::oracle::implied_vol;

/// Violation tolerance on raw-unit derivatives.
pub const DEFAULT_VIOLATION_TOL: f64 = 1e-6;

const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationLocation {
    /// Raw maturity.
    pub maturity: f64,
    /// Raw forward strike.
    pub strike: f64,
    pub calendar: bool,
    pub butterfly: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub n_calendar: usize,
    pub n_butterfly: usize,
    pub n_points: usize,
    /// Points failing either condition.
    pub n_violating: usize,
    pub fraction: f64,
    pub locations: Vec<ViolationLocation>,
}

impl ViolationReport {
    pub fn write_locations_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["T", "k", "calendar", "butterfly"])?;
        for l in &self.locations {
            wtr.write_record([
                l.maturity.to_string(),
                l.strike.to_string(),
                (l.calendar as u8).to_string(),
                (l.butterfly as u8).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Count calendar (`∂T F < -tol`) and butterfly (`∂²kk F < -tol`) violations
/// at `points` given in scaled coordinates.
pub fn count_violations(
    params: &NetParams,
    points: &[(f64, f64)],
    scaling: &ScalingBox,
    tol: f64,
    exec: Exec,
) -> ViolationReport {
    let f = scaling.derivative_factors();
    let flagged: Vec<Vec<ViolationLocation>> = exec.map_chunks(points, CHUNK, |_, chunk| {
        chunk
            .iter()
            .filter_map(|&(t, k)| {
                let e = params.forward_with_sensitivities(t, k);
                let calendar = f.c_t * e.d_t < -tol;
                let butterfly = f.c_k * f.c_k * e.d_kk < -tol;
                (calendar || butterfly).then(|| {
                    let (maturity, strike) = scaling.unscale(t, k);
                    ViolationLocation { maturity, strike, calendar, butterfly }
                })
            })
            .collect()
    });
    let locations: Vec<ViolationLocation> = flagged.into_iter().flatten().collect();
    let n_points = points.len();
    ViolationReport {
        n_calendar: locations.iter().filter(|l| l.calendar).count(),
        n_butterfly: locations.iter().filter(|l| l.butterfly).count(),
        n_points,
        n_violating: locations.len(),
        fraction: if n_points == 0 { 0.0 } else { locations.len() as f64 / n_points as f64 },
        locations,
    }
}

/// `n_t × n_k` evenly spaced points covering `[0,1]²`, maturity-major.
pub fn unit_grid(n_t: usize, n_k: usize) -> Vec<(f64, f64)> {
    let axis = |i: usize, n: usize| if n <= 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
    (0..n_t)
        .flat_map(|i| (0..n_k).map(move |j| (axis(i, n_t), axis(j, n_k))))
        .collect()
}

/// `n` seeded uniform points in `[0,1]²`.
pub fn random_unit_points(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect()
}

/// Root-mean-square difference.
pub fn rmse(predicted: &[f64], reference: &[f64]) -> Result<f64> {
    if predicted.len() != reference.len() {
        return Err(Error::ShapeMismatch {
            expected: reference.len(),
            got: predicted.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let sq: Vec<f64> = predicted.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).collect();
    Ok((pairwise_sum(&sq) / sq.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpliedVolRmse {
    pub rmse: f64,
    /// Quotes where both inversions succeeded.
    pub n_used: usize,
    pub n_failed: usize,
}

/// Implied-vol RMSE between two sets of put prices for the same quotes.
/// Quotes whose inversion fails on either side are counted, not used.
pub fn implied_vol_rmse(
    predicted: &[f64],
    reference: &[MarketQuote],
    spot: f64,
    rates: &TermStructure,
    divs: &TermStructure,
) -> Result<ImpliedVolRmse> {
    if predicted.len() != reference.len() {
        return Err(Error::ShapeMismatch {
            expected: reference.len(),
            got: predicted.len(),
        });
    }
    let mut pred_iv = Vec::new();
    let mut ref_iv = Vec::new();
    let mut n_failed = 0;
    for (p, q) in predicted.iter().zip(reference) {
        let t = q.maturity;
        if t <= 0.0 {
            n_failed += 1;
            continue;
        }
        let r = rates.integrate(0.0, t)? / t;
        let d = divs.integrate(0.0, t)? / t;
        match (
            implied_vol(*p, spot, q.strike, t, r, d),
            implied_vol(q.price, spot, q.strike, t, r, d),
        ) {
            (Ok(a), Ok(b)) => {
                pred_iv.push(a);
                ref_iv.push(b);
            }
            _ => n_failed += 1,
        }
    }
    let rmse = if pred_iv.is_empty() { f64::NAN } else { rmse(&pred_iv, &ref_iv)? };
    Ok(ImpliedVolRmse {
        rmse,
        n_used: pred_iv.len(),
        n_failed,
    })
}

/// Put prices predicted by a network for raw-coordinate quotes.
pub fn predict_prices(
    params: &NetParams,
    quotes: &[MarketQuote],
    scaling: &ScalingBox,
    rates: &TermStructure,
    divs: &TermStructure,
    exec: Exec,
) -> Vec<f64> {
    exec.map_chunks(quotes, CHUNK, |_, chunk| {
        chunk
            .iter()
            .map(|q| {
                let k = forward_strike(q.strike, q.maturity, rates, divs);
                let (t, ks) = scaling.scale(q.maturity, k);
                params.forward(t, ks) * (-divs.integral_unchecked(0.0, q.maturity)).exp()
            })
            .collect::<Vec<_>>()
    })
    .concat()
}

/// Values on a `(T, K)` grid, maturity-major, with per-cell validity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    maturities: Vec<f64>,
    strikes: Vec<f64>,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl SurfaceGrid {
    pub fn new(maturities: Vec<f64>, strikes: Vec<f64>, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        let increasing = |v: &[f64]| !v.is_empty() && v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&maturities) || !increasing(&strikes) {
            return Err(Error::InvalidInput("grid axes must be non-empty and strictly increasing".into()));
        }
        let n = maturities.len() * strikes.len();
        if values.len() != n {
            return Err(Error::ShapeMismatch { expected: n, got: values.len() });
        }
        if valid.len() != n {
            return Err(Error::ShapeMismatch { expected: n, got: valid.len() });
        }
        Ok(Self { maturities, strikes, values, valid })
    }

    /// A grid with every cell valid.
    pub fn filled(maturities: Vec<f64>, strikes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(maturities, strikes, values, vec![true; n])
    }

    pub fn maturities(&self) -> &[f64] {
        &self.maturities
    }

    pub fn strikes(&self) -> &[f64] {
        &self.strikes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn index(&self, i_t: usize, i_k: usize) -> usize {
        i_t * self.strikes.len() + i_k
    }

    pub fn get(&self, i_t: usize, i_k: usize) -> f64 {
        self.values[self.index(i_t, i_k)]
    }

    pub fn is_valid(&self, i_t: usize, i_k: usize) -> bool {
        self.valid[self.index(i_t, i_k)]
    }

    pub fn n_invalid(&self) -> usize {
        self.valid.iter().filter(|v| !**v).count()
    }

    /// CSV `T,K,value,flag`; `flag` is 1 on invalid cells.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["T", "K", "value", "flag"])?;
        for (i, t) in self.maturities.iter().enumerate() {
            for (j, k) in self.strikes.iter().enumerate() {
                let idx = self.index(i, j);
                wtr.write_record([
                    t.to_string(),
                    k.to_string(),
                    self.values[idx].to_string(),
                    (!self.valid[idx] as u8).to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

fn grid_cells(maturities: &[f64], strikes: &[f64]) -> Vec<(f64, f64)> {
    maturities
        .iter()
        .flat_map(|&t| strikes.iter().map(move |&k| (t, k)))
        .collect()
}

/// Local volatility `σ(T, K) = √(2·dup)` on a raw `(T, K)` grid.
///
/// Cells where the Dupire denominator guard binds, or where `dup < 0`, are
/// flagged invalid and carry `NaN`.
#[allow(clippy::too_many_arguments)]
pub fn extract_local_vol(
    params: &NetParams,
    maturities: &[f64],
    strikes: &[f64],
    scaling: &ScalingBox,
    rates: &TermStructure,
    divs: &TermStructure,
    guard: f64,
    exec: Exec,
) -> Result<SurfaceGrid> {
    if maturities.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidInput("local vol grid maturities must be > 0".into()));
    }
    let factors = scaling.derivative_factors();
    let cells = grid_cells(maturities, strikes);
    let out: Vec<(f64, bool)> = exec
        .map_chunks(&cells, CHUNK, |_, chunk| {
            chunk
                .iter()
                .map(|&(t, strike)| {
                    let k = forward_strike(strike, t, rates, divs);
                    let (ts, ks) = scaling.scale(t, k);
                    let e = params.forward_with_sensitivities(ts, ks);
                    let hv = dupire_half_variance(&e, k, factors, guard);
                    if hv.guarded || !(hv.dup >= 0.0) {
                        (f64::NAN, false)
                    } else {
                        ((2.0 * hv.dup).sqrt(), true)
                    }
                })
                .collect::<Vec<_>>()
        })
        .concat();
    let (values, valid) = out.into_iter().unzip();
    SurfaceGrid::new(maturities.to_vec(), strikes.to_vec(), values, valid)
}

/// Network put prices on a raw `(T, K)` grid.
pub fn price_surface(
    params: &NetParams,
    maturities: &[f64],
    strikes: &[f64],
    scaling: &ScalingBox,
    rates: &TermStructure,
    divs: &TermStructure,
    exec: Exec,
) -> Result<SurfaceGrid> {
    let quotes: Vec<MarketQuote> = grid_cells(maturities, strikes)
        .into_iter()
        .map(|(maturity, strike)| MarketQuote { maturity, strike, price: 0.0 })
        .collect();
    let values = predict_prices(params, &quotes, scaling, rates, divs, exec);
    SurfaceGrid::filled(maturities.to_vec(), strikes.to_vec(), values)
}

/// Hidden-unit count `Σ0 · ε^(-i/α) · ln(1/ε)` for a target accuracy `ε`.
pub fn sparsity_bound(eps: f64, alpha: f64, i: f64, sigma0: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("accuracy must lie in (0, 1), got {eps}")));
    }
    if !(alpha > 0.0 && i > 0.0 && sigma0 > 0.0) {
        return Err(Error::Domain(format!(
            "alpha, i and sigma0 must be positive, got ({alpha}, {i}, {sigma0})"
        )));
    }
    Ok(sigma0 * eps.powf(-i / alpha) * (1.0 / eps).ln())
}
