use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lvcal::backtest::McConfig;
use lvcal::objective::{HalfVarianceBand, PenaltyWeights};
use lvcal::oracle::{LocalVolFn, NoiseSpec, SmileVol};
use lvcal::trainer::TrainConfig;
use lvcal::{ScalingBox, TermStructure};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Evenly spaced axis `min..=max` with `n` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub const fn new(min: f64, max: f64, n: usize) -> Self {
        Self { min, max, n }
    }

    pub fn nodes(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.min];
        }
        (0..self.n)
            .map(|i| self.min + (self.max - self.min) * i as f64 / (self.n - 1) as f64)
            .collect()
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.n == 0 || !(self.min > 0.0) || !(self.max >= self.min) || (self.n > 1 && self.max == self.min) {
            bail!("{what}: need 0 < min < max and n >= 1, got {self:?}");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub maturities: Axis,
    pub strikes: Axis,
}

impl Grid {
    fn validate(&self, what: &str) -> Result<()> {
        self.maturities.validate(&format!("{what}.maturities"))?;
        self.strikes.validate(&format!("{what}.strikes"))
    }
}

/// A deterministic rate or dividend-yield curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CurveSpec {
    Flat(f64),
    Knots { knot_times: Vec<f64>, values: Vec<f64> },
    /// CSV file `t,rate`, resolved relative to the working directory.
    File(PathBuf),
}

impl Default for CurveSpec {
    fn default() -> Self {
        CurveSpec::Flat(0.0)
    }
}

impl CurveSpec {
    pub fn resolve(&self) -> Result<TermStructure> {
        Ok(match self {
            CurveSpec::Flat(r) => TermStructure::flat(*r),
            CurveSpec::Knots { knot_times, values } => TermStructure::new(knot_times.clone(), values.clone())?,
            CurveSpec::File(p) => lvcal::io::read_curve(p).with_context(|| format!("reading curve {}", p.display()))?,
        })
    }
}

/// Ground-truth local volatility used to synthesize chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VolSpec {
    Flat { sigma: f64 },
    Smile { base: f64, curvature: f64, sigma_min: f64, sigma_max: f64 },
}

impl Default for VolSpec {
    fn default() -> Self {
        let s = SmileVol::new(1.0);
        VolSpec::Smile { base: s.base, curvature: s.curvature, sigma_min: s.sigma_min, sigma_max: s.sigma_max }
    }
}

impl VolSpec {
    pub fn resolve(&self, spot: f64) -> Result<LocalVolFn> {
        Ok(match *self {
            VolSpec::Flat { sigma } => {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    bail!("flat vol must be >= 0, got {sigma}");
                }
                LocalVolFn::flat(sigma)
            }
            VolSpec::Smile { base, curvature, sigma_min, sigma_max } => {
                SmileVol { spot, base, curvature, sigma_min, sigma_max }.into_local_vol()?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSpec {
    pub random_points: usize,
    pub grid_side: usize,
    pub tolerance: f64,
    /// Raw `(T, K)` grid for price and local volatility surfaces.
    pub surface: Grid,
}

impl Default for AuditSpec {
    fn default() -> Self {
        Self {
            random_points: 10_000,
            grid_side: 100,
            tolerance: lvcal::audit::DEFAULT_VIOLATION_TOL,
            surface: Grid { maturities: Axis::new(0.2, 2.0, 10), strikes: Axis::new(70.0, 130.0, 25) },
        }
    }
}

/// Nodes at which a network's local volatility is sampled before Monte Carlo
/// lookup. The nodes cover the network's chart box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionSpec {
    pub n_maturities: usize,
    pub n_strikes: usize,
}

impl Default for ExtractionSpec {
    fn default() -> Self {
        Self { n_maturities: 40, n_strikes: 61 }
    }
}

/// Everything a run needs. Every field has a default, so `{}` is a valid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, overrides the training, noise and Monte Carlo seeds.
    pub seed: Option<u64>,
    pub spot: f64,
    pub rates: CurveSpec,
    pub dividends: CurveSpec,
    pub vol: VolSpec,
    pub train_grid: Grid,
    pub test_grid: Grid,
    pub tree_steps: usize,
    pub noise: Option<NoiseSpec>,
    /// Chart box in forward coordinates `(T, k)`. Defaults to the hull of
    /// the training quotes and their payoff rows.
    pub scaling_box: Option<ScalingBox>,
    pub training: TrainConfig,
    pub monte_carlo: McConfig,
    pub audit: AuditSpec,
    pub extraction: ExtractionSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            spot: 100.0,
            rates: CurveSpec::default(),
            dividends: CurveSpec::default(),
            vol: VolSpec::default(),
            train_grid: Grid { maturities: Axis::new(0.2, 2.0, 10), strikes: Axis::new(70.0, 130.0, 20) },
            test_grid: Grid { maturities: Axis::new(0.25, 1.95, 14), strikes: Axis::new(72.0, 128.0, 25) },
            tree_steps: 200,
            noise: None,
            scaling_box: None,
            training: TrainConfig {
                lambda: PenaltyWeights { calendar: 1e5, butterfly: 1e3, dupire: 10.0 },
                ..TrainConfig::default()
            },
            monte_carlo: McConfig::default(),
            audit: AuditSpec::default(),
            extraction: ExtractionSpec::default(),
        }
    }
}

/// Top-level sections whose keys are merged individually over the defaults.
/// The remaining keys (curves, vol, noise) are replaced as a whole.
const LAYERED_SECTIONS: [&str; 6] = ["training", "monte_carlo", "audit", "extraction", "train_grid", "test_grid"];

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, p) => *slot = p,
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<lvcal::ArchitectureMode>,
    pub lambda: [Option<f64>; 3],
    pub band: [Option<f64>; 2],
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub warmup: Option<usize>,
    pub aux_grid: Option<usize>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::from_json(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    /// Parse a config document layered over the defaults: keys missing from
    /// a struct section keep their run default rather than the section's own.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text)?;
        if !user.is_object() {
            bail!("config must be a JSON object");
        }
        let mut merged = serde_json::to_value(Self::default())?;
        for (key, value) in user.as_object().into_iter().flatten() {
            match merged.get_mut(key) {
                Some(slot) if LAYERED_SECTIONS.contains(&key.as_str()) => merge(slot, value.clone()),
                _ => {
                    merged[key] = value.clone();
                }
            }
        }
        Ok(serde_json::from_value(merged)?)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(s) = self.seed {
            self.training.seed = s;
            self.monte_carlo.seed = s;
            if let Some(n) = self.noise.as_mut() {
                n.seed = s;
            }
        }
        let t = &mut self.training;
        if let Some(m) = o.mode {
            t.mode = m;
        }
        let [l1, l2, l3] = o.lambda;
        t.lambda.calendar = l1.unwrap_or(t.lambda.calendar);
        t.lambda.butterfly = l2.unwrap_or(t.lambda.butterfly);
        t.lambda.dupire = l3.unwrap_or(t.lambda.dupire);
        t.band.low = o.band[0].unwrap_or(t.band.low);
        t.band.high = o.band[1].unwrap_or(t.band.high);
        t.max_epochs = o.epochs.unwrap_or(t.max_epochs);
        t.learning_rate = o.learning_rate.unwrap_or(t.learning_rate);
        t.penalty_warmup = o.warmup.unwrap_or(t.penalty_warmup);
        t.aux_grid = o.aux_grid.unwrap_or(t.aux_grid);
        self.monte_carlo.n_paths = o.paths.unwrap_or(self.monte_carlo.n_paths);
        self.monte_carlo.n_steps = o.steps.unwrap_or(self.monte_carlo.n_steps);
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spot > 0.0 && self.spot.is_finite()) {
            bail!("spot must be > 0, got {}", self.spot);
        }
        self.train_grid.validate("train_grid")?;
        self.test_grid.validate("test_grid")?;
        self.audit.surface.validate("audit.surface")?;
        if self.tree_steps < 50 {
            bail!("tree_steps must be >= 50, got {}", self.tree_steps);
        }
        if let Some(n) = self.noise {
            if !(n.scale >= 0.0 && n.scale.is_finite()) {
                bail!("noise.scale must be >= 0");
            }
        }
        if !(self.audit.tolerance >= 0.0) || self.audit.grid_side < 2 {
            bail!("audit needs tolerance >= 0 and grid_side >= 2");
        }
        if self.extraction.n_maturities < 1 || self.extraction.n_strikes < 2 {
            bail!("extraction needs n_maturities >= 1 and n_strikes >= 2");
        }
        if let Some(b) = self.scaling_box {
            ScalingBox::new(b.t_min, b.t_max, b.k_min, b.k_max)?;
        }
        self.training.validate()?;
        HalfVarianceBand::new(self.training.band.low, self.training.band.high)?;
        self.monte_carlo.validate()?;
        self.vol.resolve(self.spot)?;
        self.rates.resolve()?;
        self.dividends.resolve()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn curves(&self) -> Result<(TermStructure, TermStructure)> {
        Ok((self.rates.resolve()?, self.dividends.resolve()?))
    }
}
