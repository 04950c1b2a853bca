//! Bivariate probit checks against independent numerics: adaptive quadrature for the joint CDF, finite-difference Hessians for the information, and a
//! bisection minimiser for the target dose.

mod common;

use common::{bp_fd_expected_hessian, quadrature_bvn, quadrature_bvn_2d, random_bp_params};
use doseopt_core::linalg::sym_eigenvalues;
use doseopt_core::presets::{bp_reference_params, bp_uniform_design};
use doseopt_core::probit::{
    bp_design, d_value, elemental_info, fisher_info, joint_probs, l_gradient, norm_cdf,
    penalized_criterion, x_star, BpCriterion, BpParams, BpTargets,
};
use doseopt_core::pso::SwarmConfig;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

#[test]
fn joint_probability_matches_quadrature() {
    let p = bp_reference_params();
    let (a, b) = p.predictors(0.5);
    assert!((a - 0.05).abs() < 1e-12 && (b + 2.48).abs() < 1e-12);
    let cells = joint_probs(&p, 0.5);
    assert!((cells[0] + cells[1] - norm_cdf(0.05)).abs() < 1e-14);
    assert!((cells[0] + cells[2] - norm_cdf(-2.48)).abs() < 1e-14);
    assert!((cells[0] - quadrature_bvn(a, b, 0.5)).abs() < 1e-8);
    assert!((cells[0] - quadrature_bvn_2d(a, b, 0.5)).abs() < 1e-8);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let a = rng.random_range(-4.0..4.0);
        let b = rng.random_range(-4.0..4.0);
        let rho = rng.random_range(-0.99..0.99);
        let q = BpParams::new([a, 0.0], [b, 0.0], rho).unwrap();
        let got = joint_probs(&q, 0.0)[0];
        let oracle = quadrature_bvn(a, b, rho);
        assert!((got - oracle).abs() < 1e-8, "a {a} b {b} rho {rho}: {got} vs {oracle}");
    }
}

#[test]
fn elemental_info_matches_fd_expected_hessian() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    while checked < 50 {
        let p = random_bp_params(&mut rng);
        let x = rng.random_range(0.0..1.5);
        let Ok(mu) = elemental_info(&p, x) else { continue };
        if joint_probs(&p, x).iter().any(|c| *c < 1e-6) {
            continue;
        }
        let oracle = bp_fd_expected_hessian(&p, x);
        let rel = (&mu - &oracle).norm() / oracle.norm();
        assert!(rel < 1e-4, "x {x} {p:?}: rel {rel:e}");
        assert!((&mu - mu.transpose()).amax() < 1e-12);
        assert!(sym_eigenvalues(&mu)[0] > -1e-10 * mu.norm());
        checked += 1;
    }
}

#[test]
fn independent_responses_give_block_diagonal_information() {
    let p = BpParams::new([-0.9, 1.9], [-3.98, 3.0], 0.0).unwrap();
    let mu = elemental_info(&p, 0.9).unwrap();
    let oracle = bp_fd_expected_hessian(&p, 0.9);
    for i in 0..2 {
        for j in 2..4 {
            assert!(mu[(i, j)].abs() < 1e-10, "cross block ({i},{j}) = {}", mu[(i, j)]);
            assert!(oracle[(i, j)].abs() < 1e-5);
        }
    }
}

fn targets(rng: &mut ChaCha8Rng) -> BpTargets {
    BpTargets {
        p_eff_star: rng.random_range(0.55..0.95),
        p_tox_star: rng.random_range(0.05..0.45),
        w: rng.random_range(0.0..1.0),
        ce: 0.0,
        ct: 0.0,
    }
}

/// Minimiser of `w (theta1 . f - q1)^2 + (1 - w)(theta2 . f - q2)^2` by bisection on its slope.
fn numeric_x_star(p: &BpParams, t: &BpTargets) -> f64 {
    let n = Normal::standard();
    let (q1, q2) = (n.inverse_cdf(t.p_eff_star), n.inverse_cdf(t.p_tox_star));
    let slope = |x: f64| {
        let (a, b) = p.predictors(x);
        2.0 * t.w * (a - q1) * p.theta1[1] + 2.0 * (1.0 - t.w) * (b - q2) * p.theta2[1]
    };
    let (mut lo, mut hi) = (-1e3, 1e3);
    assert!(slope(lo) < 0.0 && slope(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn x_star_equals_the_numeric_minimiser() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let p = random_bp_params(&mut rng);
        let t = targets(&mut rng);
        let x = x_star(&p, &t).unwrap();
        assert!((x - numeric_x_star(&p, &t)).abs() < 1e-8);
    }
}

#[test]
fn l_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let p = random_bp_params(&mut rng);
        let t = targets(&mut rng);
        let g = l_gradient(&p, &t).unwrap();
        for i in 0..4 {
            let h = 1e-6 * p.theta()[i].abs().max(1.0);
            let shifted = |s: f64| {
                let mut th = p.theta();
                th[i] += s * h;
                x_star(&p.with_theta(th), &t).unwrap()
            };
            let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
            let rel = (g[i] - fd).abs() / fd.abs().max(1e-3);
            assert!(rel < 1e-5, "component {i}: {} vs {fd}", g[i]);
        }
    }
}

#[test]
fn uniform_design_d_value() {
    let m = fisher_info(&bp_reference_params(), &bp_uniform_design()).unwrap();
    assert!((d_value(&m) - 8.605).abs() < 0.1, "{}", d_value(&m));
}

#[test]
fn swarm_d_design_beats_the_uniform_design() {
    let p = bp_reference_params();
    let t = BpTargets { p_eff_star: 0.8, p_tox_star: 0.2, w: 0.5, ce: 0.0, ct: 0.0 };
    let cfg = SwarmConfig { n_particles: 60, iters: 150, n_support: 4, dose_box: [0.0, 1.5], ..SwarmConfig::default() };
    let r = bp_design(&p, &t, BpCriterion::D, &cfg, None).unwrap();
    let uniform = penalized_criterion(&bp_uniform_design(), &p, &t, BpCriterion::D).unwrap();
    assert!(r.value < uniform, "{} vs {uniform}", r.value);
    assert!(r.design.points.iter().all(|x| (0.0..=1.5).contains(x)));
}

#[test]
fn zero_exponents_collapse_to_the_plain_criterion() {
    let p = bp_reference_params();
    let d = bp_uniform_design();
    let plain = BpTargets { p_eff_star: 0.8, p_tox_star: 0.2, w: 0.5, ce: 0.0, ct: 0.0 };
    let m = fisher_info(&p, &d).unwrap();
    assert_eq!(penalized_criterion(&d, &p, &plain, BpCriterion::D).unwrap(), d_value(&m));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cells_are_a_distribution(a in -5.0..5.0f64, b in -5.0..5.0f64, rho in -0.99..0.99f64) {
        let p = BpParams::new([a, 0.0], [b, 0.0], rho).unwrap();
        let c = joint_probs(&p, 0.0);
        prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn joint_success_grows_with_correlation(a in -3.0..3.0f64, b in -3.0..3.0f64, r1 in -0.95..0.95f64, dr in 0.01..0.5f64) {
        let r2 = (r1 + dr).min(0.99);
        let p1 = BpParams::new([a, 0.0], [b, 0.0], r1).unwrap();
        let p2 = BpParams::new([a, 0.0], [b, 0.0], r2).unwrap();
        prop_assert!(joint_probs(&p2, 0.0)[0] >= joint_probs(&p1, 0.0)[0] - 1e-14);
    }
}
