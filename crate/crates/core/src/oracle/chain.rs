use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::localvol::LocalVolFn;
use super::tree::trinomial_put;
use crate::curves::{MarketQuote, TermStructure};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Additive Gaussian price noise; prices are floored at zero afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub scale: f64,
    pub seed: u64,
}

/// A grid of puts priced on the trinomial lattice under a known local vol.
#[derive(Debug, Clone)]
pub struct SyntheticChainSpec {
    pub spot: f64,
    pub maturities: Vec<f64>,
    pub strikes: Vec<f64>,
    pub rates: TermStructure,
    pub divs: TermStructure,
    pub vol: LocalVolFn,
    pub tree_steps: usize,
    pub noise: Option<NoiseSpec>,
}

impl SyntheticChainSpec {
    pub fn validate(&self) -> Result<()> {
        let sorted_pos = |v: &[f64]| !v.is_empty() && v[0] > 0.0 && v.windows(2).all(|w| w[1] > w[0]);
        if !(self.spot > 0.0) {
            return Err(Error::InvalidInput("spot must be > 0".into()));
        }
        if !sorted_pos(&self.maturities) || !sorted_pos(&self.strikes) {
            return Err(Error::InvalidInput(
                "maturities and strikes must be positive and strictly increasing".into(),
            ));
        }
        if self.tree_steps < 50 {
            return Err(Error::InvalidInput(format!("tree steps {} < 50", self.tree_steps)));
        }
        if let Some(n) = self.noise {
            if !(n.scale >= 0.0 && n.scale.is_finite()) {
                return Err(Error::InvalidInput("noise scale must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Price every `(T, K)` pair, maturity-major.
pub fn generate_chain(spec: &SyntheticChainSpec, exec: Exec) -> Result<Vec<MarketQuote>> {
    spec.validate()?;
    let pairs: Vec<(f64, f64)> = spec
        .maturities
        .iter()
        .flat_map(|&t| spec.strikes.iter().map(move |&k| (t, k)))
        .collect();
    let priced = exec.map_chunks(&pairs, 8, |_, chunk| {
        chunk
            .iter()
            .map(|&(t, k)| trinomial_put(&spec.vol, spec.spot, k, t, &spec.rates, &spec.divs, spec.tree_steps))
            .collect::<Result<Vec<f64>>>()
    });
    let mut prices = Vec::with_capacity(pairs.len());
    for chunk in priced {
        prices.extend(chunk?);
    }
    if let Some(noise) = spec.noise {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        for p in &mut prices {
            let z: f64 = StandardNormal.sample(&mut rng);
            *p = (*p + noise.scale * z).max(0.0);
        }
    }
    pairs
        .iter()
        .zip(prices)
        .map(|(&(t, k), p)| MarketQuote::new(t, k, p))
        .collect()
}

/// Dump `σ(t, S)` on a grid as CSV `t,S,sigma`.
pub fn write_vol_grid<W: std::io::Write>(writer: W, vol: &LocalVolFn, times: &[f64], spots: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["t", "S", "sigma"])?;
    for &t in times {
        for &s in spots {
            wtr.write_record([t.to_string(), s.to_string(), vol.eval(t, s).to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
