//! Monte Carlo repricing of puts under a local volatility surface.
//!
//! Paths follow the log-Euler scheme
//! `ln S ← ln S + ∫(r−q) − σ²Δ/2 + σ√Δ Z` with `σ = σ(t, S)` taken at the
//! start of each step. Every path (or antithetic pair) draws from its own
//! ChaCha stream keyed by `(seed, index)`, so results do not depend on how
//! the work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audit::{extract_local_vol, rmse, SurfaceGrid};
use crate::curves::{MarketQuote, ScalingBox, TermStructure};
use crate::error::{Error, Result};
use crate::exec::{pairwise_sum, Exec};
use crate::network::NetParams;
use crate::oracle::LocalVolFn;

const PATH_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    LogEuler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Pair each path with its mirror `−Z`; `n_paths` must then be even.
    pub antithetic: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            n_steps: 100,
            seed: 0,
            scheme: Scheme::LogEuler,
            antithetic: false,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 1 || self.n_steps < 1 {
            return Err(Error::InvalidInput("n_paths and n_steps must be >= 1".into()));
        }
        if self.antithetic && !self.n_paths.is_multiple_of(2) {
            return Err(Error::InvalidInput("antithetic sampling needs an even n_paths".into()));
        }
        Ok(())
    }
}

/// Simulated spot values at a set of step boundaries.
#[derive(Debug, Clone)]
pub struct Paths {
    horizon: f64,
    dt: f64,
    /// Sorted distinct step indices at which values were recorded.
    steps: Vec<usize>,
    /// `values[m][p]`: spot of path `p` at `steps[m]`.
    values: Vec<Vec<f64>>,
    antithetic: bool,
    /// `∫₀ r` up to each recorded step.
    rate_integrals: Vec<f64>,
}

impl Paths {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_paths(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Times of the recorded step boundaries.
    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|&s| s as f64 * self.dt).collect()
    }

    /// Spot values recorded for `maturity` after snapping.
    pub fn at(&self, maturity: f64) -> Result<&[f64]> {
        Ok(&self.values[self.slot(maturity)?])
    }

    fn slot(&self, maturity: f64) -> Result<usize> {
        if maturity > self.horizon * (1.0 + 1e-12) {
            return Err(Error::BeyondHorizon { maturity, horizon: self.horizon });
        }
        let step = snap(maturity, self.dt);
        self.steps
            .binary_search(&step)
            .map_err(|_| Error::InvalidInput(format!("maturity {maturity} was not recorded in the simulation")))
    }
}

fn snap(maturity: f64, dt: f64) -> usize {
    ((maturity / dt).round() as usize).max(1)
}

/// Simulate `cfg.n_paths` paths to `horizon`, recording spots at the step
/// boundaries nearest to each of `maturities`.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    vol: &LocalVolFn,
    spot: f64,
    rates: &TermStructure,
    divs: &TermStructure,
    horizon: f64,
    maturities: &[f64],
    cfg: &McConfig,
    exec: Exec,
) -> Result<Paths> {
    cfg.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidInput(format!("horizon {horizon} must be > 0")));
    }
    if !(spot > 0.0) {
        return Err(Error::InvalidInput(format!("spot {spot} must be > 0")));
    }
    let dt = horizon / cfg.n_steps as f64;
    let mut steps = Vec::with_capacity(maturities.len());
    for &m in maturities {
        if !(m > 0.0) {
            return Err(Error::InvalidInput(format!("maturity {m} must be > 0")));
        }
        if m > horizon * (1.0 + 1e-12) {
            return Err(Error::BeyondHorizon { maturity: m, horizon });
        }
        steps.push(snap(m, dt).min(cfg.n_steps));
    }
    steps.sort_unstable();
    steps.dedup();
    let last = steps.last().copied().unwrap_or(0);

    let time = |i: usize| if i == cfg.n_steps { horizon } else { i as f64 * dt };
    let drift: Vec<f64> = (0..last)
        .map(|i| rates.integral_unchecked(time(i), time(i + 1)) - divs.integral_unchecked(time(i), time(i + 1)))
        .collect();
    let rate_integrals: Vec<f64> = steps.iter().map(|&s| rates.integral_unchecked(0.0, time(s))).collect();

    let per_unit = if cfg.antithetic { 2 } else { 1 };
    let n_units = cfg.n_paths / per_unit;
    let ln_s0 = spot.ln();
    let sqrt_dt = dt.sqrt();

    let chunks = exec.map_ranges(n_units, PATH_CHUNK, |range| {
        let width = range.len() * per_unit;
        let mut out = vec![Vec::with_capacity(width); steps.len()];
        let mut x = [0.0f64; 2];
        for unit in range {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(unit as u64);
            x[..per_unit].fill(ln_s0);
            let mut slot = 0;
            for (i, mu) in drift.iter().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                let t = time(i);
                for (j, xj) in x[..per_unit].iter_mut().enumerate() {
                    let sigma = vol.eval(t, xj.exp());
                    let zj = if j == 0 { z } else { -z };
                    *xj += mu - 0.5 * sigma * sigma * dt + sigma * sqrt_dt * zj;
                }
                while slot < steps.len() && steps[slot] == i + 1 {
                    for xj in &x[..per_unit] {
                        out[slot].push(xj.exp());
                    }
                    slot += 1;
                }
            }
        }
        out
    });

    let mut values = vec![Vec::with_capacity(cfg.n_paths); steps.len()];
    for chunk in chunks {
        for (dst, src) in values.iter_mut().zip(chunk) {
            dst.extend(src);
        }
    }
    Ok(Paths {
        horizon,
        dt,
        steps,
        values,
        antithetic: cfg.antithetic,
        rate_integrals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McPriceResult {
    pub maturity: f64,
    pub strike: f64,
    pub price: f64,
    pub std_error: f64,
}

/// Discounted mean put payoff for each quote, with its standard error.
/// Under antithetic sampling the error is computed over pair averages.
pub fn mc_price_puts(paths: &Paths, quotes: &[MarketQuote]) -> Result<Vec<McPriceResult>> {
    quotes
        .iter()
        .map(|q| {
            let slot = paths.slot(q.maturity)?;
            let disc = (-paths.rate_integrals[slot]).exp();
            let spots = &paths.values[slot];
            let samples: Vec<f64> = if paths.antithetic {
                spots
                    .chunks_exact(2)
                    .map(|p| disc * 0.5 * ((q.strike - p[0]).max(0.0) + (q.strike - p[1]).max(0.0)))
                    .collect()
            } else {
                spots.iter().map(|s| disc * (q.strike - s).max(0.0)).collect()
            };
            let (price, std_error) = mean_and_error(&samples);
            Ok(McPriceResult {
                maturity: q.maturity,
                strike: q.strike,
                price,
                std_error,
            })
        })
        .collect()
}

fn mean_and_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Piecewise-constant local vol taking the value of the nearest valid grid
/// node. Both axes are normalized to `[0,1]` before measuring distance; ties
/// go to the node with the smallest maturity-major index. Queries outside the
/// grid are clamped onto it.
pub fn nn_lookup_vol(grid: &SurfaceGrid) -> Result<LocalVolFn> {
    let valid: Vec<f64> = grid
        .values()
        .iter()
        .zip(grid.valid())
        .filter(|(_, ok)| **ok)
        .map(|(v, _)| *v)
        .collect();
    if valid.is_empty() {
        return Err(Error::InvalidInput("every cell of the volatility grid is invalid".into()));
    }
    if valid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidInput("valid volatility cells must be finite and >= 0".into()));
    }
    let lo = valid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = valid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lookup = NearestNode::new(grid.clone());
    LocalVolFn::new(move |t: f64, s: f64| lookup.value(t, s), lo, hi)
}

struct NearestNode {
    grid: SurfaceGrid,
    t_span: f64,
    k_span: f64,
}

impl NearestNode {
    fn new(grid: SurfaceGrid) -> Self {
        let span = |a: &[f64]| {
            let w = a[a.len() - 1] - a[0];
            if w > 0.0 { w } else { 1.0 }
        };
        Self {
            t_span: span(grid.maturities()),
            k_span: span(grid.strikes()),
            grid,
        }
    }

    fn value(&self, t: f64, s: f64) -> f64 {
        let (i, j) = (nearest(self.grid.maturities(), t), nearest(self.grid.strikes(), s));
        if self.grid.is_valid(i, j) {
            return self.grid.get(i, j);
        }
        let (ts, ks) = (self.grid.maturities(), self.grid.strikes());
        let mut best = (f64::INFINITY, f64::NAN);
        for (a, &tn) in ts.iter().enumerate() {
            for (b, &kn) in ks.iter().enumerate() {
                if !self.grid.is_valid(a, b) {
                    continue;
                }
                let dt = (tn - t.clamp(ts[0], ts[ts.len() - 1])) / self.t_span;
                let dk = (kn - s.clamp(ks[0], ks[ks.len() - 1])) / self.k_span;
                let d = dt * dt + dk * dk;
                if d < best.0 {
                    best = (d, self.grid.get(a, b));
                }
            }
        }
        best.1
    }
}

/// Index of the axis node closest to `x`; the lower index wins ties.
fn nearest(axis: &[f64], x: f64) -> usize {
    let i = axis.partition_point(|&a| a < x);
    if i == 0 {
        0
    } else if i == axis.len() {
        axis.len() - 1
    } else if x - axis[i - 1] <= axis[i] - x {
        i - 1
    } else {
        i
    }
}

/// Where the volatility for a backtest comes from.
#[derive(Debug, Clone)]
pub enum VolSource {
    Function(LocalVolFn),
    Grid(SurfaceGrid),
    /// A trained network, extracted on `maturities × strikes` and then looked
    /// up by nearest node.
    Network {
        params: NetParams,
        scaling: ScalingBox,
        guard: f64,
        maturities: Vec<f64>,
        strikes: Vec<f64>,
    },
}

impl VolSource {
    /// A network source sampled on `n_t × n_k` nodes covering its chart box.
    /// Maturities start one step above the box floor so `T = 0` is avoided;
    /// the strike axis spans the box's forward-strike range.
    pub fn network_on_box(params: NetParams, scaling: ScalingBox, guard: f64, n_t: usize, n_k: usize) -> Result<Self> {
        if n_t < 1 || n_k < 2 {
            return Err(Error::InvalidInput("need n_t >= 1 and n_k >= 2".into()));
        }
        let t0 = scaling.t_min.max(0.0);
        let dt = (scaling.t_max - t0) / n_t as f64;
        let maturities = (1..=n_t).map(|i| t0 + dt * i as f64).collect();
        let dk = (scaling.k_max - scaling.k_min) / (n_k - 1) as f64;
        let strikes = (0..n_k).map(|j| scaling.k_min + dk * j as f64).collect();
        Ok(VolSource::Network { params, scaling, guard, maturities, strikes })
    }

    pub fn resolve(&self, rates: &TermStructure, divs: &TermStructure, exec: Exec) -> Result<LocalVolFn> {
        match self {
            VolSource::Function(f) => Ok(f.clone()),
            VolSource::Grid(g) => nn_lookup_vol(g),
            VolSource::Network { params, scaling, guard, maturities, strikes } => {
                let g = extract_local_vol(params, maturities, strikes, scaling, rates, divs, *guard, exec)?;
                nn_lookup_vol(&g)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub rmse: f64,
    /// `√(mean s.e.²)` across quotes.
    pub pooled_std_error: f64,
    pub results: Vec<McPriceResult>,
    pub config: McConfig,
}

/// Reprice `quotes` by simulation under `source` and compare with their prices.
pub fn backtest_rmse(
    source: &VolSource,
    quotes: &[MarketQuote],
    spot: f64,
    rates: &TermStructure,
    divs: &TermStructure,
    cfg: &McConfig,
    exec: Exec,
) -> Result<BacktestReport> {
    if quotes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let vol = source.resolve(rates, divs, exec)?;
    let maturities: Vec<f64> = quotes.iter().map(|q| q.maturity).collect();
    let horizon = maturities.iter().copied().fold(0.0, f64::max);
    let paths = simulate(&vol, spot, rates, divs, horizon, &maturities, cfg, exec)?;
    let results = mc_price_puts(&paths, quotes)?;
    let mc: Vec<f64> = results.iter().map(|r| r.price).collect();
    let reference: Vec<f64> = quotes.iter().map(|q| q.price).collect();
    let se2: Vec<f64> = results.iter().map(|r| r.std_error * r.std_error).collect();
    Ok(BacktestReport {
        rmse: rmse(&mc, &reference)?,
        pooled_std_error: (pairwise_sum(&se2) / se2.len() as f64).sqrt(),
        results,
        config: *cfg,
    })
}
