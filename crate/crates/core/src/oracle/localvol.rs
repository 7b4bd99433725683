use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A local volatility surface `σ(t, S)`.
pub trait VolSurface: Send + Sync {
    fn sigma(&self, t: f64, spot: f64) -> f64;
}

impl<F> VolSurface for F
where
    F: Fn(f64, f64) -> f64 + Send + Sync,
{
    fn sigma(&self, t: f64, spot: f64) -> f64 {
        self(t, spot)
    }
}

/// A volatility surface with its output clamped to `[sigma_min, sigma_max]`.
#[derive(Clone)]
pub struct LocalVolFn {
    surface: Arc<dyn VolSurface>,
    sigma_min: f64,
    sigma_max: f64,
}

impl fmt::Debug for LocalVolFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LocalVolFn")
            .field("sigma_min", &self.sigma_min)
            .field("sigma_max", &self.sigma_max)
            .finish_non_exhaustive()
    }
}

impl LocalVolFn {
    pub fn new(surface: impl VolSurface + 'static, sigma_min: f64, sigma_max: f64) -> Result<Self> {
        if !(sigma_min >= 0.0 && sigma_max >= sigma_min && sigma_max.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "clamp range [{sigma_min}, {sigma_max}] is invalid"
            )));
        }
        Ok(Self {
            surface: Arc::new(surface),
            sigma_min,
            sigma_max,
        })
    }

    pub fn flat(sigma: f64) -> Self {
        Self::new(move |_: f64, _: f64| sigma, sigma, sigma).expect("flat vol must be >= 0")
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    /// Clamped volatility; non-finite raw values map to `sigma_min`.
    #[inline]
    pub fn eval(&self, t: f64, spot: f64) -> f64 {
        let s = self.surface.sigma(t, spot);
        if s.is_finite() {
            s.clamp(self.sigma_min, self.sigma_max)
        } else {
            self.sigma_min
        }
    }
}

/// Parametric smile `base + curvature · ln²(S/S0) · e^{-t}`, clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmileVol {
    pub spot: f64,
    pub base: f64,
    pub curvature: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl SmileVol {
    pub fn new(spot: f64) -> Self {
        Self {
            spot,
            base: 0.2,
            curvature: 0.003,
            sigma_min: 0.05,
            sigma_max: 0.4,
        }
    }

    pub fn raw(&self, t: f64, s: f64) -> f64 {
        let m = (s / self.spot).ln();
        self.base + self.curvature * m * m * (-t).exp()
    }

    pub fn into_local_vol(self) -> Result<LocalVolFn> {
        let (lo, hi) = (self.sigma_min, self.sigma_max);
        LocalVolFn::new(move |t: f64, s: f64| self.raw(t, s), lo, hi)
    }
}
