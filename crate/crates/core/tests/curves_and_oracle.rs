mod common;

use common::{chain, linspace, smile_vol, SPOT};
use lvcal::curves::{from_forward, to_forward};
use lvcal::oracle::{bs_put, generate_chain, implied_vol, trinomial_put, LocalVolFn, NoiseSpec, SyntheticChainSpec};
use lvcal::{Exec, MarketQuote, ScalingBox, TermStructure};
use proptest::prelude::*;

fn curve() -> impl Strategy<Value = TermStructure> {
    prop::collection::vec((0.01f64..1.0, -0.02f64..0.08), 1..6).prop_map(|pieces| {
        let mut knots = vec![0.0];
        for (dt, _) in &pieces[..pieces.len() - 1] {
            knots.push(knots.last().unwrap() + dt);
        }
        TermStructure::new(knots, pieces.iter().map(|p| p.1).collect()).unwrap()
    })
}

proptest! {
    #[test]
    fn forward_transform_round_trips(
        rates in curve(),
        divs in curve(),
        t in 0.0f64..3.0,
        k in 1.0f64..300.0,
        price in 0.0f64..50.0,
    ) {
        let q = MarketQuote { maturity: t, strike: k, price };
        let back = from_forward(&to_forward(&q, &rates, &divs).unwrap(), &rates, &divs).unwrap();
        prop_assert!((back.strike - k).abs() <= 1e-12 * k);
        prop_assert!((back.price - price).abs() <= 1e-12 * price.max(1e-300));
        prop_assert_eq!(back.maturity, t);
    }

    #[test]
    fn integration_is_additive(rates in curve(), a in 0.0f64..2.0, b in 0.0f64..2.0, c in 0.0f64..2.0) {
        let mut v = [a, b, c];
        v.sort_by(f64::total_cmp);
        let [a, b, c] = v;
        let whole = rates.integrate(a, c).unwrap();
        let parts = rates.integrate(a, b).unwrap() + rates.integrate(b, c).unwrap();
        prop_assert!((whole - parts).abs() <= 1e-14);
    }

    #[test]
    fn forward_transform_preserves_strike_order(
        rates in curve(),
        divs in curve(),
        t in 0.0f64..3.0,
        k1 in 1.0f64..300.0,
        k2 in 1.0f64..300.0,
    ) {
        let f = |k: f64| to_forward(&MarketQuote { maturity: t, strike: k, price: 1.0 }, &rates, &divs).unwrap().strike;
        prop_assert_eq!(k1 < k2, f(k1) < f(k2));
    }

    #[test]
    fn chart_is_a_bijection(
        t_min in 0.0f64..1.0, dt in 0.1f64..3.0, k_min in 10.0f64..100.0, dk in 1.0f64..100.0,
        ts in -0.5f64..1.5, ks in -0.5f64..1.5,
    ) {
        let b = ScalingBox::new(t_min, t_min + dt, k_min, k_min + dk).unwrap();
        let (t, k) = b.unscale(ts, ks);
        let (t2, k2) = b.scale(t, k);
        prop_assert!((t2 - ts).abs() <= 1e-12 && (k2 - ks).abs() <= 1e-12);
    }

    #[test]
    fn implied_vol_inverts_closed_form(
        sigma in 0.05f64..1.0,
        t in 0.1f64..3.0,
        moneyness in 0.7f64..1.4,
        r in 0.0f64..0.05,
        q in 0.0f64..0.03,
    ) {
        let k = SPOT * moneyness;
        let p = bs_put(SPOT, k, t, r, q, sigma);
        // Where vega underflows the price carries no information about sigma.
        let d1 = ((SPOT / k).ln() + (r - q + 0.5 * sigma * sigma) * t) / (sigma * t.sqrt());
        let vega = SPOT * (-q * t).exp() * t.sqrt() * (-0.5 * d1 * d1).exp() / (2.0 * std::f64::consts::PI).sqrt();
        prop_assume!(vega > 1e-4);
        let iv = implied_vol(p, SPOT, k, t, r, q).unwrap();
        prop_assert!((iv - sigma).abs() <= 1e-8, "{} vs {}", iv, sigma);
    }
}

/// Root-mean-square tree error over a strike/maturity panel; the average
/// reduction per doubling of steps must be at least 30%.
#[test]
fn tree_error_shrinks_as_steps_double() {
    let z = TermStructure::zero();
    let vol = LocalVolFn::flat(0.2);
    let panel: Vec<(f64, f64)> = [0.25, 0.5, 1.0, 2.0]
        .iter()
        .flat_map(|&t| [80.0, 90.0, 100.0, 110.0, 120.0].map(|k| (k, t)))
        .collect();
    let errs: Vec<f64> = [50, 100, 200, 400]
        .iter()
        .map(|&n| {
            let sq: f64 = panel
                .iter()
                .map(|&(k, t)| {
                    let e = trinomial_put(&vol, SPOT, k, t, &z, &z, n).unwrap() - bs_put(SPOT, k, t, 0.0, 0.0, 0.2);
                    e * e
                })
                .sum();
            (sq / panel.len() as f64).sqrt()
        })
        .collect();
    let mean_ratio = (errs[3] / errs[0]).powf(1.0 / 3.0);
    assert!(mean_ratio <= 0.7, "errors {errs:?}, mean ratio {mean_ratio}");
    assert!(errs[3] < errs[1] && errs[2] < errs[0], "errors {errs:?}");
}

#[test]
fn flat_chain_matches_closed_form() {
    let quotes = chain(&LocalVolFn::flat(0.2), linspace(0.2, 2.0, 10), linspace(70.0, 130.0, 20));
    assert_eq!(quotes.len(), 200);
    for q in &quotes {
        let exact = bs_put(SPOT, q.strike, q.maturity, 0.0, 0.0, 0.2);
        assert!((q.price - exact).abs() < 0.02, "{q:?} vs {exact}");
    }
}

#[test]
fn smile_chain_is_monotone_in_strike_and_maturity() {
    let rates = TermStructure::flat(0.02);
    let divs = TermStructure::flat(0.01);
    let spec = SyntheticChainSpec {
        spot: SPOT,
        maturities: linspace(0.2, 2.0, 6),
        strikes: linspace(70.0, 130.0, 13),
        rates,
        divs,
        vol: smile_vol(),
        tree_steps: 200,
        noise: None,
    };
    let quotes = generate_chain(&spec, Exec::default()).unwrap();
    let n_k = spec.strikes.len();
    for (i, row) in quotes.chunks(n_k).enumerate() {
        assert!(row.windows(2).all(|w| w[1].price >= w[0].price), "row {i} not increasing in K");
    }
    // Forward put prices are nondecreasing in T at fixed forward moneyness;
    // with zero carry this is the raw price.
    let zero = chain(&smile_vol(), linspace(0.2, 2.0, 6), linspace(70.0, 130.0, 13));
    for j in 0..n_k {
        let col: Vec<f64> = zero.iter().skip(j).step_by(n_k).map(|q| q.price).collect();
        assert!(col.windows(2).all(|w| w[1] >= w[0]), "strike column {j}: {col:?}");
    }
}

#[test]
fn noisy_chain_depends_only_on_seed() {
    let spec = SyntheticChainSpec {
        spot: SPOT,
        maturities: vec![0.5, 1.0],
        strikes: vec![90.0, 100.0, 110.0],
        rates: TermStructure::zero(),
        divs: TermStructure::zero(),
        vol: LocalVolFn::flat(0.2),
        tree_steps: 100,
        noise: Some(NoiseSpec { scale: 0.05, seed: 4 }),
    };
    let a = generate_chain(&spec, Exec::Serial).unwrap();
    let b = generate_chain(&spec, Exec::default()).unwrap();
    assert_eq!(a, b);
    let other = SyntheticChainSpec { noise: Some(NoiseSpec { scale: 0.05, seed: 5 }), ..spec };
    assert_ne!(a, generate_chain(&other, Exec::default()).unwrap());
}
