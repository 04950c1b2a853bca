//! Independent oracles for the model layer: finite-difference Hessians, dense algebra for the
//! Sherman-Morrison-Woodbury updates, and structural properties of information matrices.

mod common;

use common::random_swm_instance;
use doseopt_core::criteria::{
    efficiency, phi_d, swm_augmented_cvar, swm_augmented_det, CriterionSpec, EfficiencyKind, Evaluator,
};
use doseopt_core::linalg::sym_eigenvalues;
use doseopt_core::model::fisher_info;
use doseopt_core::presets::{daily_fits, pooled_fit, reported_d_optimal};
use doseopt_core::{Design, FisherInfo, ModelSpec, ParamVector};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn log_probs(spec: &ModelSpec, theta: &[f64], x: f64) -> Option<Vec<f64>> {
    let tv = spec.params(theta.to_vec()).ok()?;
    let pi = spec.category_probs(&tv, x).ok()?.pi;
    Some(pi.iter().map(|p| p.ln()).collect())
}

/// `-sum_c pi_c d^2 log pi_c / d theta^2` by central second differences.
fn fd_expected_hessian(spec: &ModelSpec, theta: &[f64], x: f64) -> Option<DMatrix<f64>> {
    let p = theta.len();
    let pi: Vec<f64> = log_probs(spec, theta, x)?.iter().map(|l| l.exp()).collect();
    let h = 1e-3;
    let eval = |di: usize, si: f64, dj: usize, sj: f64| {
        let mut t = theta.to_vec();
        t[di] += si * h;
        t[dj] += sj * h;
        log_probs(spec, &t, x)
    };
    let mut m = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            let pp = eval(i, 1.0, j, 1.0)?;
            let pm = eval(i, 1.0, j, -1.0)?;
            let mp = eval(i, -1.0, j, 1.0)?;
            let mm = eval(i, -1.0, j, -1.0)?;
            let mut v = 0.0;
            for c in 0..pi.len() {
                v -= pi[c] * (pp[c] - pm[c] - mp[c] + mm[c]) / (4.0 * h * h);
            }
            m[(i, j)] = v;
        }
    }
    Some(m)
}

fn random_theta(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let c1 = rng.random_range(-2.0..3.0);
    let gap = rng.random_range(1.0..6.0);
    let b = rng.random_range(-1.5..-0.3);
    match spec.name() {
        "cumulative-logit" => {
            let b2 = b + rng.random_range(-0.05..0.05);
            vec![c1, b, c1 + gap, b2]
        }
        _ => vec![c1, c1 + gap, b],
    }
}

#[test]
fn elemental_info_matches_fd_expected_hessian() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for name in ["proportional-odds", "cumulative-logit", "adjacent-categories", "continuation-ratio"] {
        let spec = ModelSpec::by_name(name).unwrap();
        let mut checked = 0;
        while checked < 20 {
            let theta = random_theta(&spec, &mut rng);
            let x = rng.random_range(0.0..8.0);
            let tv = spec.params(theta.clone()).unwrap();
            let Ok(mu) = spec.elemental_info(&tv, x) else { continue };
            let Some(oracle) = fd_expected_hessian(&spec, &theta, x) else { continue };
            let rel = (&mu - &oracle).norm() / oracle.norm();
            assert!(rel < 1e-4, "{name} theta {theta:?} x {x}: rel {rel:e}");
            checked += 1;
        }
    }
}

#[test]
fn swm_identities_match_dense_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let (m1, s0, c, alpha) = random_swm_instance(&mut rng);
        let dense = &m1 * (1.0 - alpha) + &s0 * s0.transpose() * alpha;

        let det = swm_augmented_det(&m1, &s0, alpha).unwrap();
        let oracle = dense.determinant();
        assert!(((det - oracle) / oracle).abs() < 1e-10, "det {det} vs {oracle}");

        let cvar = swm_augmented_cvar(&m1, &s0, alpha, &c).unwrap();
        let oracle = c.dot(&(dense.clone().try_inverse().unwrap() * &c));
        assert!(((cvar - oracle) / oracle).abs() < 1e-10, "cvar {cvar} vs {oracle}");
    }
}

fn po_theta() -> impl Strategy<Value = ParamVector> {
    (-2.0..3.0f64, 0.5..6.0f64, -1.5..-0.2f64)
        .prop_map(|(c1, gap, b)| ModelSpec::proportional_odds().params(vec![c1, c1 + gap, b]).unwrap())
}

fn design_strategy() -> impl Strategy<Value = Design> {
    prop::collection::vec((0.0..10.3f64, 0.05..1.0f64), 1..6).prop_map(|pw| {
        let s: f64 = pw.iter().map(|p| p.1).sum();
        Design {
            points: pw.iter().map(|p| p.0).collect(),
            weights: pw.iter().map(|p| p.1 / s).collect(),
            fixed_arms: Vec::new(),
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn category_probs_form_a_distribution(theta in po_theta(), x in 0.0..10.3f64) {
        for spec in [ModelSpec::proportional_odds(), ModelSpec::adjacent_categories(), ModelSpec::continuation_ratio()] {
            if let Ok(p) = spec.category_probs(&theta, x) {
                prop_assert!((p.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(p.pi.iter().all(|v| *v > 0.0 && *v < 1.0));
            }
        }
    }

    #[test]
    fn cumulative_logits_stay_ordered(theta in po_theta(), x in 0.0..10.3f64) {
        let eta = ModelSpec::proportional_odds().linear_predictors(&theta, x).unwrap();
        prop_assert!(eta[1] > eta[0]);
    }

    #[test]
    fn fisher_info_is_symmetric_psd(theta in po_theta(), d in design_strategy()) {
        let spec = ModelSpec::proportional_odds();
        if let Ok(m) = fisher_info(&spec, &theta, &d) {
            let m = m.matrix;
            prop_assert!((&m - m.transpose()).amax() <= 1e-10 * m.amax().max(1.0));
            let min = sym_eigenvalues(&m).iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!(min >= -1e-10 * m.norm());
        }
    }

    #[test]
    fn fisher_info_is_affine_in_weights(theta in po_theta(), a in design_strategy(), b in design_strategy(), t in 0.0..1.0f64) {
        let spec = ModelSpec::proportional_odds();
        if let (Ok(ma), Ok(mb)) = (fisher_info(&spec, &theta, &a), fisher_info(&spec, &theta, &b)) {
            let mix = fisher_info(&spec, &theta, &a.mixture(&b, t)).unwrap().matrix;
            let lin = ma.matrix * (1.0 - t) + mb.matrix * t;
            prop_assert!((mix - &lin).amax() <= 1e-12 * lin.amax().max(1.0));
        }
    }

    #[test]
    fn log_det_is_concave_on_segments(theta in po_theta(), a in design_strategy(), b in design_strategy(), t in 0.0..1.0f64) {
        let spec = ModelSpec::proportional_odds();
        if let (Ok(ma), Ok(mb)) = (fisher_info(&spec, &theta, &a), fisher_info(&spec, &theta, &b)) {
            let (da, db) = (phi_d(&ma), phi_d(&mb));
            prop_assume!(da.is_finite() && db.is_finite());
            let mix = FisherInfo::new(ma.matrix * t + mb.matrix * (1.0 - t));
            prop_assert!(phi_d(&mix) >= t * da + (1.0 - t) * db - 1e-9);
        }
    }

    #[test]
    fn criteria_ignore_point_order(d in design_strategy(), seed in 0u64..1000) {
        let spec = ModelSpec::proportional_odds();
        let ev = Evaluator::new(&spec, &CriterionSpec::dual(pooled_fit(), 0.5)).unwrap();
        let mut idx: Vec<usize> = (0..d.points.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let shuffled = Design {
            points: idx.iter().map(|&i| d.points[i]).collect(),
            weights: idx.iter().map(|&i| d.weights[i]).collect(),
            fixed_arms: Vec::new(),
        };
        let (v1, v2) = (ev.value(&d), ev.value(&shuffled));
        prop_assert!(v1 == v2 || (v1 - v2).abs() <= 1e-12 * v1.abs().max(1.0));
    }
}

#[test]
fn identical_nominal_sets_give_the_local_value() {
    let spec = ModelSpec::proportional_odds();
    let d = reported_d_optimal();
    let local = Evaluator::new(&spec, &CriterionSpec::d(pooled_fit())).unwrap().value(&d);
    let robust = Evaluator::new(&spec, &CriterionSpec::robust_d(vec![pooled_fit(); 5])).unwrap().value(&d);
    assert_eq!(local, robust);
    assert!(daily_fits().len() == 9);
}

#[test]
fn efficiency_of_a_design_against_itself_is_one() {
    let spec = ModelSpec::proportional_odds();
    let d = reported_d_optimal();
    for kind in [EfficiencyKind::D, EfficiencyKind::C] {
        let e = efficiency(&d, &d, kind, &spec, &pooled_fit()).unwrap();
        assert_eq!(e.value, 1.0);
    }
}

#[test]
fn efficiency_rises_when_mass_moves_toward_the_optimum() {
    let spec = ModelSpec::proportional_odds();
    let opt = reported_d_optimal();
    let start = Design::uniform(vec![0.0, 1.0, 2.0]).unwrap();
    let mut last = 0.0;
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let e = efficiency(&start.mixture(&opt, t), &opt, EfficiencyKind::D, &spec, &pooled_fit()).unwrap().value;
        assert!(e >= last - 1e-12, "t = {t}: {e} < {last}");
        last = e;
    }
}
