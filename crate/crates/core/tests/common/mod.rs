//! Oracles shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use doseopt_core::fitting::DoseCounts;
use doseopt_core::probit::{joint_probs, BpParams};
use doseopt_core::{DoseScale, ModelSpec, ParamVector};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// Doses of the 06/23 allocation.
pub const RAW_DOSES: [f64; 6] = [0.0, 1.0, 5.0, 10.0, 30.0, 100.0];

pub fn po_truth() -> ParamVector {
    ModelSpec::proportional_odds().params(vec![2.5, 7.8, -1.0]).unwrap()
}

/// Multinomial draw as a chain of conditional binomials.
pub fn multinomial(pi: &[f64], n: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut out = vec![0; pi.len()];
    let (mut left, mut rest) = (n, 1.0);
    for c in 0..pi.len() - 1 {
        let q = (pi[c] / rest).clamp(0.0, 1.0);
        out[c] = Binomial::new(left, q).unwrap().sample(rng);
        left -= out[c];
        rest -= pi[c];
    }
    out[pi.len() - 1] = left;
    out
}

pub fn simulate_counts(spec: &ModelSpec, theta: &ParamVector, n: u64, rng: &mut ChaCha8Rng) -> Vec<DoseCounts> {
    RAW_DOSES
        .iter()
        .map(|d| {
            let x = DoseScale::Log1p.transform(*d);
            let pi = spec.category_probs(theta, x).unwrap().pi;
            DoseCounts { x, counts: multinomial(&pi, n, rng) }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

fn adaptive(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
    let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, lo, hi, fa, fm, fb, whole, tol, 50)
}

/// `P(X <= a, Y <= b)` for a standard bivariate normal with correlation `rho`, integrating the
/// density over `t` after the inner integral is done in closed form with statrs' normal CDF.
pub fn quadrature_bvn(a: f64, b: f64, rho: f64) -> f64 {
    let n = Normal::standard();
    let s = (1.0 - rho * rho).sqrt();
    let f = |t: f64| n.pdf(t) * n.cdf((b - rho * t) / s);
    adaptive(&f, -12.0, a.max(-12.0), 1e-14)
}

/// Full 2-D adaptive Simpson integration of the bivariate normal density; slower, used as a
/// second, independent check.
pub fn quadrature_bvn_2d(a: f64, b: f64, rho: f64) -> f64 {
    let det = 1.0 - rho * rho;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * det.sqrt());
    let outer = |u: f64| {
        let inner = |v: f64| norm * (-(u * u - 2.0 * rho * u * v + v * v) / (2.0 * det)).exp();
        adaptive(&inner, -10.0, b.max(-10.0), 1e-13)
    };
    adaptive(&outer, -10.0, a.max(-10.0), 1e-12)
}

/// `-sum_c p_c d^2 log p_c / d theta^2` for the four bivariate probit cells by central second
/// differences.
pub fn bp_fd_expected_hessian(p: &BpParams, x: f64) -> DMatrix<f64> {
    let t0 = p.theta();
    let cells = joint_probs(p, x);
    let h = 1e-3;
    let at = |i: usize, si: f64, j: usize, sj: f64| {
        let mut t = t0;
        t[i] += si * h;
        t[j] += sj * h;
        joint_probs(&p.with_theta(t), x).map(f64::ln)
    };
    DMatrix::from_fn(4, 4, |i, j| {
        let (pp, pm, mp, mm) = (at(i, 1.0, j, 1.0), at(i, 1.0, j, -1.0), at(i, -1.0, j, 1.0), at(i, -1.0, j, -1.0));
        -(0..4).map(|c| cells[c] * (pp[c] - pm[c] - mp[c] + mm[c]) / (4.0 * h * h)).sum::<f64>()
    })
}

pub fn random_bp_params(rng: &mut ChaCha8Rng) -> BpParams {
    BpParams::new(
        [rng.random_range(-1.5..0.5), rng.random_range(0.5..2.5)],
        [rng.random_range(-4.0..-1.0), rng.random_range(1.0..3.5)],
        rng.random_range(-0.8..0.8),
    )
    .unwrap()
}

pub fn random_po(rng: &mut ChaCha8Rng) -> ParamVector {
    let c1 = rng.random_range(0.5..3.5);
    let c2 = c1 + rng.random_range(4.0..8.0);
    let b = rng.random_range(-1.6..-0.6);
    ModelSpec::proportional_odds().params(vec![c1, c2, b]).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-3)
}

/// A random SPD matrix, a `p x k` block and a cost vector for the augmented-information identities.
pub fn random_swm_instance(rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>, f64) {
    let p = rng.random_range(2..6);
    let k = rng.random_range(1..4);
    let a = DMatrix::from_fn(p, p + 2, |_, _| rng.random_range(-1.0..1.0));
    let m1 = &a * a.transpose() + DMatrix::identity(p, p) * 0.1;
    let s0 = DMatrix::from_fn(p, k, |_, _| rng.random_range(-1.0..1.0));
    let c = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
    (m1, s0, c, rng.random_range(0.01..0.95))
}
