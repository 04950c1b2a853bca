use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::records::DoseCounts;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ModelSpec, ParamVector};

/// Maximum-likelihood fit of a multivariate logistic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub theta_hat: ParamVector,
    /// Inverse observed information at the optimum.
    pub cov: Vec<Vec<f64>>,
    pub se: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    /// Number of individuals (embryos), used in the BIC penalty.
    pub n_obs: u64,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn cov_matrix(&self) -> DMatrix<f64> {
        linalg::from_rows(&self.cov).expect("square covariance")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Relative change in log-likelihood that counts as converged.
    pub tol: f64,
    /// Parameter norm beyond which the fit is declared separated.
    pub divergence_norm: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-12, divergence_norm: 1e4 }
    }
}

fn kernel_log_likelihood(spec: &ModelSpec, theta: &ParamVector, data: &[DoseCounts]) -> Result<f64> {
    let mut ll = 0.0;
    for row in data {
        let pi = spec.category_probs(theta, row.x)?.pi;
        for (y, p) in row.counts.iter().zip(&pi) {
            if *y > 0 {
                ll += *y as f64 * p.ln();
            }
        }
    }
    Ok(ll)
}

/// Multinomial log-likelihood including the multinomial coefficients.
pub fn log_likelihood(spec: &ModelSpec, theta: &ParamVector, data: &[DoseCounts]) -> Result<f64> {
    let mut ll = 0.0;
    for row in data {
        let pi = spec.category_probs(theta, row.x)?.pi;
        ll += ln_gamma(row.total() as f64 + 1.0);
        for (y, p) in row.counts.iter().zip(&pi) {
            let y = *y as f64;
            ll += y * p.ln() - ln_gamma(y + 1.0);
        }
    }
    Ok(ll)
}

/// Score vector `sum_i J_i^T (y_i / pi_i)`.
pub fn score(spec: &ModelSpec, theta: &ParamVector, data: &[DoseCounts]) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(spec.n_params());
    for row in data {
        let pi = spec.category_probs(theta, row.x)?.pi;
        let jac = spec.prob_jacobian(theta, row.x)?;
        let r = DVector::from_iterator(pi.len(), row.counts.iter().zip(&pi).map(|(y, p)| *y as f64 / p));
        g += jac.transpose() * r;
    }
    Ok(g)
}

/// Expected information `sum_i n_i s~ s~^T`.
pub fn expected_information(
    spec: &ModelSpec,
    theta: &ParamVector,
    data: &[DoseCounts],
) -> Result<DMatrix<f64>> {
    let p = spec.n_params();
    let mut m = DMatrix::zeros(p, p);
    for row in data {
        let n = row.total() as f64;
        if n > 0.0 {
            m += spec.elemental_info(theta, row.x)? * n;
        }
    }
    Ok(linalg::symmetrize(&m))
}

/// Observed information: central differences of the analytic score.
pub fn observed_information(
    spec: &ModelSpec,
    theta: &ParamVector,
    data: &[DoseCounts],
) -> Result<DMatrix<f64>> {
    let p = spec.n_params();
    let mut h = DMatrix::zeros(p, p);
    for j in 0..p {
        let step = 1e-5 * theta.values()[j].abs().max(1.0);
        let mut up = theta.values().to_vec();
        let mut dn = up.clone();
        up[j] += step;
        dn[j] -= step;
        let gu = score(spec, &theta.with_values(up)?, data)?;
        let gd = score(spec, &theta.with_values(dn)?, data)?;
        h.set_column(j, &(-(gu - gd) / (2.0 * step)));
    }
    Ok(linalg::symmetrize(&h))
}

/// Starting values: constant-term coefficients from the pooled empirical category proportions,
/// all dose coefficients zero.
fn starting_values(spec: &ModelSpec, data: &[DoseCounts]) -> Result<Vec<f64>> {
    let k = spec.n_categories();
    let mut pooled = vec![0.5; k];
    for row in data {
        for (acc, y) in pooled.iter_mut().zip(&row.counts) {
            *acc += *y as f64;
        }
    }
    let total: f64 = pooled.iter().sum();
    let pbar = DVector::from_iterator(k, pooled.iter().map(|v| v / total));
    let eta = spec.ct_matrix() * (spec.l_matrix() * pbar).map(f64::ln);

    let mut theta = vec![0.0; spec.n_params()];
    let x0 = spec.design_matrix(0.0);
    // with every dose coefficient at zero, eta_j comes only from the constant columns
    for j in 0..k - 1 {
        if let Some(col) = (0..theta.len()).find(|&c| x0[(j, c)] == 1.0 && is_constant_column(spec, c))
        {
            theta[col] = eta[j];
        }
    }
    Ok(theta)
}

fn is_constant_column(spec: &ModelSpec, col: usize) -> bool {
    let a = spec.design_matrix(0.0);
    let b = spec.design_matrix(1.7);
    (0..a.nrows()).all(|r| a[(r, col)] == b[(r, col)])
}

/// Fit `spec` to per-dose counts by Fisher scoring with step-halving.
pub fn fit_mle(spec: &ModelSpec, data: &[DoseCounts]) -> Result<FitResult> {
    fit_mle_with(spec, data, FitOptions::default())
}

pub fn fit_mle_with(spec: &ModelSpec, data: &[DoseCounts], opts: FitOptions) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::EmptyInput("no count records to fit".into()));
    }
    for row in data {
        if row.counts.len() != spec.n_categories() {
            return Err(Error::Dimension(format!(
                "row has {} categories, model expects {}",
                row.counts.len(),
                spec.n_categories()
            )));
        }
    }
    let mut levels: Vec<f64> = data.iter().filter(|r| r.total() > 0).map(|r| r.x).collect();
    levels.sort_by(|a, b| a.total_cmp(b));
    levels.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if levels.len() < spec.basis().len() {
        return Err(Error::Unidentifiable(format!(
            "{} distinct dose level(s) with data, need at least {}",
            levels.len(),
            spec.basis().len()
        )));
    }
    let n_obs: u64 = data.iter().map(|r| r.total()).sum();

    let mut theta = spec.params(starting_values(spec, data)?)?;
    // steps and stopping use the kernel: the multinomial constants are large and would swamp
    // the relative-change test in rounding error
    let mut ll = kernel_log_likelihood(spec, &theta, data)?;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iter {
        iterations = it;
        let g = score(spec, &theta, data)?;
        let info = expected_information(spec, &theta, data)?;
        let step = info.clone().lu().solve(&g).ok_or_else(|| {
            Error::Unidentifiable("expected information is singular".to_string())
        })?;
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-10 {
            let cand: Vec<f64> =
                theta.values().iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            if let Ok(cand) = theta.with_values(cand) {
                if let Ok(cll) = kernel_log_likelihood(spec, &cand, data) {
                    if cll >= ll - 1e-12 * ll.abs().max(1.0) {
                        accepted = Some((cand, cll));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        let Some((cand, cll)) = accepted else {
            // no ascent step left: either at the optimum or pushed against degenerate probabilities
            if g.norm() <= 1e-6 * ll.abs().max(1.0) {
                converged = true;
                break;
            }
            return Err(Error::Separation(format!(
                "no ascent step at iteration {it}; fitted probabilities approach 0 or 1"
            )));
        };
        let change = cll - ll;
        theta = cand;
        ll = cll;
        let norm = theta.as_dvector().norm();
        if !norm.is_finite() || norm > opts.divergence_norm {
            return Err(Error::Separation(format!("parameter norm {norm:.3e} after {it} iterations")));
        }
        if change.abs() <= opts.tol * ll.abs().max(1.0) {
            let g = score(spec, &theta, data)?;
            if g.norm() <= 1e-6 * ll.abs().max(1.0) {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::NonConvergence(iterations));
    }

    let ll = log_likelihood(spec, &theta, data)?;
    let obs = observed_information(spec, &theta, data)?;
    let cov = linalg::spd_inverse(&obs).ok_or_else(|| {
        Error::Unidentifiable("observed information is not positive definite".into())
    })?;
    let p = spec.n_params() as f64;
    Ok(FitResult {
        model: spec.name().to_string(),
        se: cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect(),
        cov: linalg::to_rows(&cov),
        theta_hat: theta,
        loglik: ll,
        aic: -2.0 * ll + 2.0 * p,
        bic: -2.0 * ll + p * (n_obs as f64).ln(),
        n_obs,
        iterations,
        converged,
    })
}
