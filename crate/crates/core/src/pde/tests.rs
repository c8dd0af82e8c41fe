use super::*;
use crate::limit::{solve_limit, LimitOptions};
use crate::model::presets;
use crate::migration::{transition_matrix, Generator};
use proptest::prelude::*;
use std::sync::OnceLock;

fn reference_density() -> &'static AgeDensity {
    static CELL: OnceLock<AgeDensity> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = presets::reference();
        AgeDensity::new(&cfg, solve_boundary(&cfg, 0.01).unwrap()).unwrap()
    })
}

fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn no_transmission_leaves_pure_migration() {
    let cfg = presets::reference().with_beta_scaled(0.0);
    let h = 0.01;
    let bs = solve_boundary(&cfg, h).unwrap();
    assert!(bs.trace.iter().all(|&x| x == 0.0));
    let gen = Generator::new(cfg.nu_s.clone()).unwrap();
    for m in [100, 1000, 2000] {
        let p = transition_matrix(&gen, m as f64 * h).p;
        for j in 0..3 {
            let exact: f64 = (0..3).map(|i| cfg.initial.s0[i] * p[(i, j)]).sum();
            assert!((bs.s_at(m)[j] - exact).abs() < 1e-5);
        }
    }
}

#[test]
fn trace_matches_limit_rate() {
    let cfg = presets::reference();
    let h = 0.01;
    let bs = solve_boundary(&cfg, h).unwrap();
    let lim = solve_limit(&cfg, &LimitOptions::new(h)).unwrap();
    assert!(sup_gap(&bs.trace, &lim.upsilon) < 1e-6f64.max(10.0 * h * h));
    assert!(sup_gap(&bs.i, &lim.i) < 1e-6);
    assert!(bs.trace.iter().all(|&x| x >= 0.0));
    assert!(bs.c_t > 0.0);
}

#[test]
fn gamma_zero_newton_agrees_with_small_gamma() {
    let mut cfg = presets::reference();
    cfg.gamma = 0.0;
    let exact = solve_boundary(&cfg, 0.01).unwrap();
    cfg.gamma = 1e-12;
    let near = solve_boundary(&cfg, 0.01).unwrap();
    assert!(sup_gap(&exact.trace, &near.trace) < 1e-8);
    assert!(exact.max_iterations <= 6);
}

#[test]
fn step_must_divide_horizon() {
    assert!(solve_boundary(&presets::reference(), 0.03).is_err());
    assert!(solve_boundary(&presets::reference(), -0.01).is_err());
}

#[test]
fn density_on_the_axes() {
    let ad = reference_density();
    for a in [0.0, 0.3, 2.5, 4.9] {
        let x = ad.eval_density(0.0, a);
        let y = ad.cfg.initial_density(a);
        for p in 0..3 {
            assert!((x[p] - y[p]).abs() < 1e-15);
        }
    }
    for t in [0.5, 3.0, 19.0] {
        assert_eq!(ad.eval_density(t, 0.0), ad.trace(t));
    }
}

#[test]
fn homogeneous_reduction_is_exact() {
    let cfg = presets::reference().without_migration();
    let ad = AgeDensity::new(&cfg, solve_boundary(&cfg, 0.01).unwrap()).unwrap();
    for (t, a) in [(3.0, 1.25), (10.0, 0.4), (19.5, 7.0)] {
        let x = ad.eval_density(t, a);
        let tr = ad.trace(t - a);
        let fc = cfg.duration.survival(a);
        for p in 0..3 {
            if tr[p] > 0.0 {
                assert!((x[p] / tr[p] - fc).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn density_beyond_duration_support_vanishes() {
    let ad = reference_density();
    let x = ad.eval_density(10.0, 900.0);
    assert!(x.iter().all(|&v| v == 0.0));
    let r = ad.pde_residual(10.0, 600.0, 1e-4);
    assert!(r.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn exponential_hazard_transport() {
    let mut cfg = presets::sir();
    cfg.horizon = 5.0;
    let ad = AgeDensity::new(&cfg, solve_boundary(&cfg, 0.01).unwrap()).unwrap();
    for (t, a) in [(2.0, 0.5), (4.0, 1.7)] {
        assert!(ad.pde_residual(t, a, 1e-4)[0].abs() < 1e-6);
    }
}

#[test]
fn boundary_condition_self_consistent() {
    let ad = reference_density();
    for t in [1.0, 7.3, 15.0] {
        let r = ad.boundary_integral_check(t, 4000);
        let q = ad.boundary_integral_check_profile(t, 4000);
        for p in 0..3 {
            // O(h²) at h = 0.01.
            assert!(r[p].abs() < 1e-6, "{t}: {r:?}");
            assert!((r[p] - q[p]).abs() < 1e-6);
        }
    }
    let cfg = presets::reference().with_beta_scaled(0.0);
    let ad0 = AgeDensity::new(&cfg, solve_boundary(&cfg, 0.01).unwrap()).unwrap();
    assert!(ad0.boundary_integral_check(4.0, 400).iter().all(|&v| v == 0.0));
}

#[test]
fn cumulative_matches_limit() {
    let ad = reference_density();
    let h = 0.01;
    let lim = solve_limit(&presets::reference(), &LimitOptions::new(h).with_surface(10, 10)).unwrap();
    let surf = lim.surface.as_ref().unwrap();
    assert!(ad.cumulative_from_density(3.0, 0.0).iter().all(|&v| v == 0.0));
    for t in [2.0, 9.0] {
        let full = ad.cumulative_from_density(t, t + 10.0);
        let m = lim.index_of(t);
        assert!(sup_gap(&full, lim.i_at(m)) < 1e-6);
    }
    let x = ad.cumulative_from_density(2.0, 1.5);
    assert!(sup_gap(&x, &surf.value(2.0, 1.5)) < 10.0 * h * h);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn density_nonnegative(t in 0.0f64..20.0, a in 0.0f64..30.0) {
        prop_assert!(reference_density().eval_density(t, a).iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn pde_residual_small_off_the_diagonal(t in 0.1f64..19.9, a in 0.01f64..24.0) {
        // Stay clear of a = t and of the profile and support kinks.
        let kinks = [0.5, 2.0, 4.0];
        prop_assume!((t - a).abs() > 1e-3);
        prop_assume!(kinks.iter().all(|k| (a - k).abs() > 1e-3));
        prop_assume!((a - t - 5.0).abs() > 1e-3);
        let r = reference_density().pde_residual(t, a, 1e-4);
        prop_assert!(r.iter().all(|v| v.abs() < 1e-5), "{:?}", r);
    }
}
