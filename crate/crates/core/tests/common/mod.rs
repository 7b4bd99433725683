#![allow(dead_code)]

use lvcal::curves::to_forward;
use lvcal::network::{ArchitectureMode, NetParams};
use lvcal::objective::{Objective, PenaltySite, TrainingPoint};
use lvcal::oracle::{generate_chain, LocalVolFn, SmileVol, SyntheticChainSpec};
use lvcal::trainer::{augment_with_payoffs, Dataset};
use lvcal::{Exec, ForwardQuote, MarketQuote, ScalingBox, TermStructure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SPOT: f64 = 100.0;

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

pub fn flat_vol() -> LocalVolFn {
    LocalVolFn::flat(0.2)
}

pub fn smile_vol() -> LocalVolFn {
    SmileVol::new(SPOT).into_local_vol().unwrap()
}

pub fn chain(vol: &LocalVolFn, maturities: Vec<f64>, strikes: Vec<f64>) -> Vec<MarketQuote> {
    let spec = SyntheticChainSpec {
        spot: SPOT,
        maturities,
        strikes,
        rates: TermStructure::zero(),
        divs: TermStructure::zero(),
        vol: vol.clone(),
        tree_steps: 200,
        noise: None,
    };
    generate_chain(&spec, Exec::default()).unwrap()
}

/// 10 maturities × 20 strikes.
pub fn training_chain(vol: &LocalVolFn) -> Vec<MarketQuote> {
    chain(vol, linspace(0.2, 2.0, 10), linspace(70.0, 130.0, 20))
}

/// 14 maturities × 25 strikes strictly inside the training hull.
pub fn test_chain(vol: &LocalVolFn) -> Vec<MarketQuote> {
    chain(vol, linspace(0.25, 1.95, 14), linspace(72.0, 128.0, 25))
}

/// Forward coordinates (zero curves), payoff rows added, chart fitted.
pub fn dataset(quotes: &[MarketQuote]) -> Dataset {
    let z = TermStructure::zero();
    let fq: Vec<ForwardQuote> = quotes.iter().map(|q| to_forward(q, &z, &z).unwrap()).collect();
    Dataset::new(&augment_with_payoffs(&fq, SPOT).unwrap(), None).unwrap()
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, scaling: &ScalingBox, with_payoff_row: bool) -> Vec<TrainingPoint> {
    (0..n)
        .map(|i| {
            let t = if with_payoff_row && i == 0 { 0.0 } else { rng.random_range(0.05..1.0) };
            let k = rng.random_range(0.0..1.0);
            let (maturity, strike) = scaling.unscale(t, k);
            TrainingPoint {
                site: PenaltySite { t, k, maturity, strike },
                target: rng.random_range(0.0..20.0),
            }
        })
        .collect()
}

pub fn random_params(rng: &mut ChaCha8Rng, mode: ArchitectureMode) -> NetParams {
    let h1 = 2 * rng.random_range(1..4);
    let h2 = rng.random_range(2..6);
    NetParams::init(mode, [h1, h2], rng.random()).unwrap()
}

pub struct GradCheck {
    pub rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Compare the analytic gradient with central differences, skipping
/// parameters whose two finite-difference slopes (steps h and h/2)
/// disagree, which signals a kink inside the stencil.
pub fn gradient_check(obj: &Objective, params: &NetParams, points: &[TrainingPoint]) -> GradCheck {
    let (_, g) = obj.loss_and_gradient(params, points).unwrap();
    let loss = |p: &NetParams| obj.loss(p, points).unwrap().total;
    let mut diff2 = 0.0;
    let mut norm2 = 0.0;
    let (mut checked, mut skipped) = (0, 0);
    #[allow(clippy::needless_range_loop)]
    for i in 0..params.num_params() {
        let theta = params.as_slice()[i];
        let slope = |h: f64| {
            let mut p = params.clone();
            p.as_mut_slice()[i] = theta + h;
            let up = loss(&p);
            p.as_mut_slice()[i] = theta - h;
            let dn = loss(&p);
            (up - dn) / (2.0 * h)
        };
        let h = 1e-5 * theta.abs().max(1.0);
        let (a, b) = (slope(h), slope(h / 2.0));
        let scale = a.abs().max(b.abs()).max(1e-8);
        if (a - b).abs() > 1e-5 * scale + 1e-9 {
            skipped += 1;
            continue;
        }
        let fd = (4.0 * b - a) / 3.0;
        diff2 += (g[i] - fd) * (g[i] - fd);
        norm2 += fd * fd;
        checked += 1;
    }
    GradCheck {
        rel_error: diff2.sqrt() / norm2.sqrt().max(1e-12),
        checked,
        skipped,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
