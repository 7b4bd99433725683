mod common;

use common::{linspace, rng};
use lvcal::audit::{
    count_violations, extract_local_vol, random_unit_points, rmse, sparsity_bound, unit_grid, SurfaceGrid,
    DEFAULT_VIOLATION_TOL,
};
use lvcal::objective::{dupire_half_variance, DEFAULT_GUARD};
use lvcal::{ArchitectureMode, Exec, NetParams, ScalingBox, TermStructure};
use proptest::prelude::*;
use rand::seq::SliceRandom;

/// Brute-force scan: signs of dT and dkk estimated by finite differences.
fn fd_violations(p: &NetParams, points: &[(f64, f64)], scaling: &ScalingBox) -> usize {
    let f = scaling.derivative_factors();
    points
        .iter()
        .filter(|&&(t, k)| {
            let h = 1e-4;
            let d_t = (p.forward(t + h, k) - p.forward(t - h, k)) / (2.0 * h);
            let d_kk = (p.forward(t, k + h) - 2.0 * p.forward(t, k) + p.forward(t, k - h)) / (h * h);
            f.c_t * d_t < -1e-3 || f.c_k * f.c_k * d_kk < -1e-3
        })
        .count()
}

#[test]
fn violation_counts_agree_with_finite_difference_scan() {
    let scaling = ScalingBox::new(0.0, 2.0, 60.0, 140.0).unwrap();
    let points = random_unit_points(2000, 1);
    let mut nontrivial = 0;
    for seed in 0..6 {
        let p = NetParams::init(ArchitectureMode::DenseSoft, [8, 8], seed).unwrap();
        let report = count_violations(&p, &points, &scaling, DEFAULT_VIOLATION_TOL, Exec::default());
        let fd = fd_violations(&p, &points, &scaling);
        assert!(fd <= report.n_violating, "seed {seed}: fd {fd} > exact {}", report.n_violating);
        assert!(report.n_violating <= report.n_calendar + report.n_butterfly);
        assert_eq!(report.fraction, report.n_violating as f64 / points.len() as f64);
        assert_eq!(report.locations.len(), report.n_violating);
        nontrivial += (report.n_violating > 0) as usize;
    }
    assert!(nontrivial > 0);
}

#[test]
fn hard_networks_never_violate() {
    let scaling = ScalingBox::new(0.0, 2.0, 60.0, 140.0).unwrap();
    let points = [random_unit_points(10_000, 2), unit_grid(100, 100)].concat();
    for seed in 0..5 {
        let mut p = NetParams::init(ArchitectureMode::SparseHard, [10, 6], seed).unwrap();
        let mut r = rng(seed);
        for w in p.as_mut_slice() {
            *w += rand::Rng::random_range(&mut r, -1.0..1.0);
        }
        p.project_weights();
        let report = count_violations(&p, &points, &scaling, DEFAULT_VIOLATION_TOL, Exec::default());
        assert_eq!(report.n_violating, 0, "seed {seed}");
    }
}

#[test]
fn local_vol_squared_and_halved_is_half_variance() {
    let scaling = ScalingBox::new(0.0, 2.0, 60.0, 140.0).unwrap();
    let rates = TermStructure::flat(0.03);
    let divs = TermStructure::flat(0.01);
    let p = NetParams::init(ArchitectureMode::SparseHard, [8, 6], 11).unwrap();
    let (ts, ks) = (linspace(0.2, 1.8, 5), linspace(70.0, 130.0, 7));
    let grid = extract_local_vol(&p, &ts, &ks, &scaling, &rates, &divs, DEFAULT_GUARD, Exec::default()).unwrap();
    let mut valid = 0;
    for (i, &t) in ts.iter().enumerate() {
        for (j, &strike) in ks.iter().enumerate() {
            let k = lvcal::curves::forward_strike(strike, t, &rates, &divs);
            let (tt, kk) = scaling.scale(t, k);
            let hv = dupire_half_variance(&p.forward_with_sensitivities(tt, kk), k, scaling.derivative_factors(), DEFAULT_GUARD);
            if grid.is_valid(i, j) {
                let s = grid.get(i, j);
                assert!((s * s / 2.0 - hv.dup).abs() <= 1e-12 * hv.dup.abs().max(1.0));
                valid += 1;
            } else {
                assert!(hv.guarded || hv.dup < 0.0);
            }
        }
    }
    assert!(valid > 0);
}

#[test]
fn sparsity_bound_grows_as_accuracy_or_smoothness_drops() {
    let b = |eps, alpha| sparsity_bound(eps, alpha, 2.0, 10.0).unwrap();
    assert!((b(0.1, 2.0) - 100.0 * 10f64.ln()).abs() < 1e-9);
    assert!(b(0.05, 2.0) > b(0.1, 2.0));
    assert!(b(0.1, 1.5) > b(0.1, 2.0));
    assert!(sparsity_bound(1.5, 2.0, 2.0, 10.0).is_err());
}

#[test]
fn grid_rejects_unsorted_axes() {
    assert!(SurfaceGrid::filled(vec![1.0, 0.5], vec![1.0], vec![0.0, 0.0]).is_err());
    assert!(SurfaceGrid::filled(vec![0.5, 1.0], vec![1.0], vec![0.0]).is_err());
}

proptest! {
    #[test]
    fn rmse_ignores_pair_order(pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..50), seed in 0u64..100) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rng(seed));
        let (sa, sb): (Vec<f64>, Vec<f64>) = shuffled.into_iter().unzip();
        let x = rmse(&a, &b).unwrap();
        let y = rmse(&sa, &sb).unwrap();
        prop_assert!((x - y).abs() <= 1e-12 * x.max(1.0));
    }
}
