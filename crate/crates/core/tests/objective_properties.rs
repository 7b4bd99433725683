mod common;

use common::{gradient_check, random_params, random_points, rng};
use lvcal::objective::{
    dupire_half_variance, penalty_vector, HalfVarianceBand, Objective, PenaltyWeights, DEFAULT_GUARD,
};
use lvcal::oracle::bs_put;
use lvcal::{ArchitectureMode, EvalResult, Exec, NetParams, ScaleFactors, ScalingBox};
use proptest::prelude::*;

const MODES: [ArchitectureMode; 3] = [
    ArchitectureMode::DenseSoft,
    ArchitectureMode::SparseSoft,
    ArchitectureMode::SparseHard,
];

fn objective(weights: (f64, f64, f64), scaling: &ScalingBox) -> Objective {
    Objective::new(
        PenaltyWeights::new(weights.0, weights.1, weights.2).unwrap(),
        HalfVarianceBand::default(),
        scaling.derivative_factors(),
    )
}

#[test]
fn single_point_gradient_matches_finite_differences() {
    let scaling = ScalingBox::new(0.0, 2.0, 60.0, 140.0).unwrap();
    for (i, mode) in MODES.into_iter().enumerate() {
        let mut r = rng(40 + i as u64);
        let p = NetParams::init(mode, [4, 4], i as u64).unwrap();
        let points = random_points(&mut r, 1, &scaling, false);
        let g = gradient_check(&objective((1.0, 1.0, 1.0), &scaling), &p, &points);
        assert!(g.rel_error < 1e-4, "{mode:?}: {}", g.rel_error);
    }
}

#[test]
fn gradient_check_over_modes_and_weights() {
    let scaling = ScalingBox::new(0.0, 2.0, 60.0, 140.0).unwrap();
    let patterns = [(0.0, 0.0, 0.0), (1.0, 1.0, 0.0), (1.0, 1.0, 1.0)];
    let mut checked = 0;
    for i in 0..20u64 {
        let mut r = rng(500 + i);
        let p = random_params(&mut r, MODES[i as usize % 3]);
        let points = random_points(&mut r, 4, &scaling, i % 2 == 0);
        let g = gradient_check(&objective(patterns[(i as usize / 3) % 3], &scaling), &p, &points);
        assert!(g.rel_error < 1e-4, "configuration {i}: {}", g.rel_error);
        checked += g.checked;
    }
    assert!(checked > 200);
}

#[test]
fn band_is_irrelevant_without_dupire_weight() {
    let scaling = ScalingBox::new(0.0, 2.0, 60.0, 140.0).unwrap();
    let mut r = rng(9);
    let p = random_params(&mut r, ArchitectureMode::DenseSoft);
    let points = random_points(&mut r, 6, &scaling, true);
    let mut a = objective((1.0, 2.0, 0.0), &scaling);
    let mut b = a.clone();
    a.band = HalfVarianceBand::new(1e-6, 1e-5).unwrap();
    b.band = HalfVarianceBand::new(10.0, 20.0).unwrap();
    let (la, ga) = a.loss_and_gradient(&p, &points).unwrap();
    let (lb, gb) = b.loss_and_gradient(&p, &points).unwrap();
    assert_eq!(la.total, lb.total);
    assert_eq!(ga, gb);
}

#[test]
fn serial_and_parallel_agree_bitwise() {
    let scaling = ScalingBox::new(0.0, 2.0, 60.0, 140.0).unwrap();
    let mut r = rng(10);
    let p = NetParams::init(ArchitectureMode::SparseSoft, [16, 8], 3).unwrap();
    let points = random_points(&mut r, 700, &scaling, false);
    let base = objective((1e5, 1e3, 10.0), &scaling);
    let serial = base.clone().with_exec(Exec::Serial).loss_and_gradient(&p, &points).unwrap();
    let default = base.with_exec(Exec::default()).loss_and_gradient(&p, &points).unwrap();
    assert_eq!(serial.0, default.0);
    assert_eq!(serial.1, default.1);
}

#[test]
fn half_variance_of_black_scholes_surface() {
    let (spot, sigma) = (100.0, 0.2);
    for &(t, k) in &[(0.5, 90.0), (1.0, 100.0), (1.5, 115.0)] {
        let p = |t: f64, k: f64| bs_put(spot, k, t, 0.0, 0.0, sigma);
        let (ht, hk) = (1e-4, 1e-2);
        let e = EvalResult {
            value: p(t, k),
            d_t: (p(t + ht, k) - p(t - ht, k)) / (2.0 * ht),
            d_k: (p(t, k + hk) - p(t, k - hk)) / (2.0 * hk),
            d_kk: (p(t, k + hk) - 2.0 * p(t, k) + p(t, k - hk)) / (hk * hk),
        };
        let hv = dupire_half_variance(&e, k, ScaleFactors::UNIT, DEFAULT_GUARD);
        assert!(!hv.guarded);
        assert!((hv.dup - 0.02).abs() < 1e-5, "T {t} K {k}: {}", hv.dup);
    }
}

/// Re-express a dense network trained on chart `a` as a network on chart `b`
/// computing the same raw surface.
fn rechart(p: &NetParams, a: &ScalingBox, b: &ScalingBox) -> NetParams {
    let at = (b.t_max - b.t_min) / (a.t_max - a.t_min);
    let bt = (b.t_min - a.t_min) / (a.t_max - a.t_min);
    let ak = (b.k_max - b.k_min) / (a.k_max - a.k_min);
    let bk = (b.k_min - a.k_min) / (a.k_max - a.k_min);
    let l = *p.layout();
    let mut out = p.clone();
    let d = out.as_mut_slice();
    for u in 0..l.h1 {
        let (wt, wk) = (d[l.w1 + 2 * u], d[l.w1 + 2 * u + 1]);
        d[l.w1 + 2 * u] = wt * at;
        d[l.w1 + 2 * u + 1] = wk * ak;
        d[l.b1 + u] += wt * bt + wk * bk;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn half_variance_does_not_depend_on_chart(
        seed in 0u64..1000,
        t in 0.3f64..1.8,
        k in 75.0f64..125.0,
        shift in -0.2f64..0.2,
        stretch in 0.5f64..2.0,
    ) {
        let a = ScalingBox::new(0.0, 2.0, 60.0, 140.0).unwrap();
        let b = ScalingBox::new(0.1 + shift, 0.1 + shift + 2.0 * stretch, 50.0 + 10.0 * shift, 50.0 + 100.0 * stretch).unwrap();
        let pa = NetParams::init(ArchitectureMode::DenseSoft, [6, 5], seed).unwrap();
        let pb = rechart(&pa, &a, &b);
        let (ta, ka) = a.scale(t, k);
        let (tb, kb) = b.scale(t, k);
        let ea = pa.forward_with_sensitivities(ta, ka);
        let eb = pb.forward_with_sensitivities(tb, kb);
        prop_assert!((ea.value - eb.value).abs() <= 1e-10 * (1.0 + ea.value.abs()));
        let ha = dupire_half_variance(&ea, k, a.derivative_factors(), DEFAULT_GUARD);
        let hb = dupire_half_variance(&eb, k, b.derivative_factors(), DEFAULT_GUARD);
        prop_assume!(!ha.guarded && !hb.guarded);
        let (da, db) = (ha.dup, hb.dup);
        prop_assert!((da - db).abs() <= 1e-8 * (1.0 + da.abs()), "{} vs {}", da, db);
    }

    #[test]
    fn penalties_vanish_exactly_on_admissible_points(
        d_t in -1.0f64..1.0,
        d_kk in -1.0f64..1.0,
        strike in 0.5f64..2.0,
    ) {
        let band = HalfVarianceBand::default();
        let e = EvalResult { value: 1.0, d_t, d_k: 0.0, d_kk };
        let phi = penalty_vector(&e, strike, ScaleFactors::UNIT, band, DEFAULT_GUARD);
        let hv = dupire_half_variance(&e, strike, ScaleFactors::UNIT, DEFAULT_GUARD);
        prop_assume!(!hv.guarded);
        let admissible = d_t >= 0.0 && d_kk >= 0.0 && hv.dup >= band.low && hv.dup <= band.high;
        let zero = phi.calendar == 0.0 && phi.butterfly == 0.0 && phi.dupire == 0.0;
        prop_assert_eq!(admissible, zero);
        prop_assert!(phi.calendar >= 0.0 && phi.butterfly >= 0.0 && phi.dupire >= 0.0);
    }

    #[test]
    fn loss_breakdown_is_additive(seed in 0u64..500, l1 in 0.0f64..1e5, l2 in 0.0f64..1e3, l3 in 0.0f64..10.0) {
        let scaling = ScalingBox::new(0.0, 2.0, 60.0, 140.0).unwrap();
        let mut r = rng(seed);
        let p = random_params(&mut r, MODES[seed as usize % 3]);
        let points = random_points(&mut r, 5, &scaling, true);
        let b = objective((l1, l2, l3), &scaling).loss(&p, &points).unwrap();
        let expected = b.fit_l1 + l1 * b.pen_calendar + l2 * b.pen_butterfly + l3 * b.pen_dupire;
        prop_assert_eq!(b.total, expected);
        prop_assert!(b.fit_l1 >= 0.0 && b.pen_calendar >= 0.0 && b.pen_butterfly >= 0.0 && b.pen_dupire >= 0.0);
    }
}
