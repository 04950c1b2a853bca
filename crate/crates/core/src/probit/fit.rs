//! Maximum likelihood for the bivariate probit model with known correlation (Fisher scoring).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{cell_jacobian, elemental_info, joint_probs, BpParams};
use crate::error::{Error, Result};
use crate::linalg;

/// Counts `(n11, n10, n01, n00)` at dose `x` (efficacy first).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpCounts {
    pub x: f64,
    pub counts: [u64; 4],
}

impl BpCounts {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpFit {
    pub params: BpParams,
    /// Inverse expected information, 4 x 4 rows.
    pub cov: Vec<Vec<f64>>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Multinomial log-likelihood without the combinatorial constant.
pub fn bp_log_likelihood(params: &BpParams, data: &[BpCounts]) -> f64 {
    let mut ll = 0.0;
    for d in data {
        let p = joint_probs(params, d.x);
        for (n, pc) in d.counts.iter().zip(p) {
            if *n > 0 {
                if pc <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                ll += *n as f64 * pc.ln();
            }
        }
    }
    ll
}

fn score_and_info(params: &BpParams, data: &[BpCounts]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mut score = DVector::zeros(4);
    let mut info = DMatrix::zeros(4, 4);
    for d in data {
        let n = d.total();
        if n == 0 {
            continue;
        }
        let p = joint_probs(params, d.x);
        let j = cell_jacobian(params, d.x);
        let base = d.counts[3] as f64 / p[3];
        let r = DVector::from_iterator(3, (0..3).map(|c| d.counts[c] as f64 / p[c] - base));
        score += &j * r;
        info += elemental_info(params, d.x)? * n as f64;
    }
    Ok((score, info))
}

/// Fisher scoring from `start`; the correlation stays at `start.rho`.
pub fn fit_bp_mle(data: &[BpCounts], start: &BpParams) -> Result<BpFit> {
    start.validate()?;
    let distinct = {
        let mut xs: Vec<f64> = data.iter().filter(|d| d.total() > 0).map(|d| d.x).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        xs.len()
    };
    if distinct < 2 {
        return Err(Error::Unidentifiable(format!("{distinct} distinct dose(s); need at least 2")));
    }
    let mut params = *start;
    let mut ll = bp_log_likelihood(&params, data);
    if !ll.is_finite() {
        return Err(Error::invalid("starting values give zero likelihood to observed cells"));
    }
    let max_iter = 200;
    for it in 1..=max_iter {
        let (score, info) = score_and_info(&params, data)?;
        let inv = linalg::spd_inverse(&info)
            .ok_or_else(|| Error::Singular("expected information during scoring".into()))?;
        let step = &inv * &score;
        let theta = DVector::from_row_slice(&params.theta());
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &theta + &step * t;
            let next = params.with_theta([cand[0], cand[1], cand[2], cand[3]]);
            let nll = bp_log_likelihood(&next, data);
            if nll.is_finite() && nll >= ll - 1e-12 * ll.abs().max(1.0) {
                accepted = Some((next, nll));
                break;
            }
            t *= 0.5;
        }
        let Some((next, nll)) = accepted else {
            if score.norm() < 1e-6 {
                return finish(params, ll, info, it, true);
            }
            return Err(Error::Separation("step halving failed to increase the likelihood".into()));
        };
        let moved = (&step * t).norm();
        params = next;
        let gain = nll - ll;
        ll = nll;
        if params.theta().iter().any(|v| v.abs() > 1e4) {
            return Err(Error::Separation("parameter estimates diverged".into()));
        }
        if moved < 1e-10 || gain.abs() < 1e-13 {
            let (_, info) = score_and_info(&params, data)?;
            return finish(params, ll, info, it, true);
        }
    }
    let (_, info) = score_and_info(&params, data)?;
    finish(params, ll, info, max_iter, false)
}

fn finish(params: BpParams, loglik: f64, info: DMatrix<f64>, iterations: usize, converged: bool) -> Result<BpFit> {
    let cov = linalg::spd_inverse(&info).ok_or_else(|| Error::Singular("information at the estimate".into()))?;
    Ok(BpFit { params, cov: linalg::to_rows(&cov), loglik, iterations, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::bp_reference_params;

    fn expected_counts(p: &BpParams, n: f64) -> Vec<BpCounts> {
        // large fractional-free counts near the expectation, so the MLE sits close to `p`
        [0.2, 0.5, 0.8, 1.1, 1.4]
            .iter()
            .map(|&x| {
                let c = joint_probs(p, x);
                BpCounts { x, counts: c.map(|v| (v * n).round() as u64) }
            })
            .collect()
    }

    #[test]
    fn recovers_parameters_from_expected_counts() {
        let truth = bp_reference_params();
        let data = expected_counts(&truth, 1e6);
        let start = truth.with_theta([-0.5, 1.5, -3.5, 2.5]);
        let fit = fit_bp_mle(&data, &start).unwrap();
        assert!(fit.converged);
        for (a, b) in fit.params.theta().iter().zip(truth.theta()) {
            assert!((a - b).abs() < 5e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn score_vanishes_at_the_estimate() {
        let truth = bp_reference_params();
        let data = expected_counts(&truth, 1e4);
        let fit = fit_bp_mle(&data, &truth).unwrap();
        let (score, _) = score_and_info(&fit.params, &data).unwrap();
        assert!(score.norm() < 1e-5, "{}", score.norm());
    }

    #[test]
    fn single_dose_is_unidentifiable() {
        let data = vec![BpCounts { x: 0.5, counts: [3, 4, 5, 6] }];
        assert!(matches!(
            fit_bp_mle(&data, &bp_reference_params()),
            Err(Error::Unidentifiable(_))
        ));
    }
}
