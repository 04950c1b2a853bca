//! Efficacy-toxicity bivariate probit model with known correlation: cell probabilities,
//! elemental information, D- and L-criteria, penalties and PSO designs.

mod bvn;
mod fit;
mod sim;

pub use bvn::{bvn_cdf, norm_cdf, norm_pdf};
pub use fit::{fit_bp_mle, BpCounts, BpFit};
pub use sim::{two_stage_simulate, Replicate, SimConfig, SimReport};

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::linalg;
use crate::pso::{self, SwarmConfig, SwarmResult};

/// Cells below this probability make the elemental information undefined.
const MIN_CELL: f64 = 1e-12;

/// Parameters: efficacy `(theta11, theta12)`, toxicity `(theta21, theta22)`, known correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpParams {
    pub theta1: [f64; 2],
    pub theta2: [f64; 2],
    pub rho: f64,
}

impl BpParams {
    pub fn new(theta1: [f64; 2], theta2: [f64; 2], rho: f64) -> Result<Self> {
        let p = Self { theta1, theta2, rho };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) {
            return Err(Error::invalid(format!("correlation {} must lie in (-1, 1)", self.rho)));
        }
        if self.theta().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("probit parameters must be finite"));
        }
        Ok(())
    }

    /// `(theta11, theta12, theta21, theta22)`.
    pub fn theta(&self) -> [f64; 4] {
        [self.theta1[0], self.theta1[1], self.theta2[0], self.theta2[1]]
    }

    pub fn with_theta(&self, t: [f64; 4]) -> Self {
        Self { theta1: [t[0], t[1]], theta2: [t[2], t[3]], rho: self.rho }
    }

    /// Efficacy and toxicity linear predictors at `x`.
    pub fn predictors(&self, x: f64) -> (f64, f64) {
        (self.theta1[0] + self.theta1[1] * x, self.theta2[0] + self.theta2[1] * x)
    }
}

/// Target response probabilities, their trade-off weight and penalty exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpTargets {
    pub p_eff_star: f64,
    pub p_tox_star: f64,
    pub w: f64,
    #[serde(default)]
    pub ce: f64,
    #[serde(default)]
    pub ct: f64,
}

impl BpTargets {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p_eff_star", self.p_eff_star), ("p_tox_star", self.p_tox_star)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(format!("{name} = {v} must lie in (0, 1)")));
            }
        }
        if !(0.0..=1.0).contains(&self.w) {
            return Err(Error::invalid(format!("w = {} must lie in [0, 1]", self.w)));
        }
        if !(self.ce >= 0.0 && self.ct >= 0.0) {
            return Err(Error::invalid("penalty exponents must be non-negative"));
        }
        Ok(())
    }

    /// Same targets with the penalty switched off.
    pub fn unpenalized(&self) -> Self {
        Self { ce: 0.0, ct: 0.0, ..*self }
    }
}

/// Cell probabilities `(p11, p10, p01, p00)` (efficacy first, toxicity second).
pub fn joint_probs(params: &BpParams, x: f64) -> [f64; 4] {
    let (a, b) = params.predictors(x);
    let p11 = bvn_cdf(a, b, params.rho);
    let p1 = norm_cdf(a);
    let q1 = norm_cdf(b);
    let p10 = (p1 - p11).max(0.0);
    let p01 = (q1 - p11).max(0.0);
    let p00 = (1.0 - p1 - q1 + p11).max(0.0);
    [p11, p10, p01, p00]
}

/// `d(p11, p10, p01) / d theta`, 4 x 3 (`C1 C2`).
pub fn cell_jacobian(params: &BpParams, x: f64) -> DMatrix<f64> {
    let (a, b) = params.predictors(x);
    let s = (1.0 - params.rho * params.rho).sqrt();
    let u1 = norm_cdf((b - params.rho * a) / s);
    let u2 = norm_cdf((a - params.rho * b) / s);
    let da = norm_pdf(a);
    let db = norm_pdf(b);
    let f = [1.0, x];
    let mut j = DMatrix::zeros(4, 3);
    for r in 0..2 {
        j[(r, 0)] = da * f[r] * u1;
        j[(r, 1)] = da * f[r] * (1.0 - u1);
        j[(r, 2)] = -da * f[r] * u1;
        j[(r + 2, 0)] = db * f[r] * u2;
        j[(r + 2, 1)] = -db * f[r] * u2;
        j[(r + 2, 2)] = db * f[r] * (1.0 - u2);
    }
    j
}

/// Elemental information `mu(x) = C1 C2 (P - p p^T)^{-1} C2^T C1^T`, 4 x 4.
pub fn elemental_info(params: &BpParams, x: f64) -> Result<DMatrix<f64>> {
    let cells = joint_probs(params, x);
    if let Some(c) = cells.iter().find(|c| !(**c >= MIN_CELL)) {
        return Err(Error::DegenerateDose { dose: x, detail: format!("cell probability {c:e}") });
    }
    let p = nalgebra::Vector3::new(cells[0], cells[1], cells[2]);
    let cov = Matrix3::from_diagonal(&p) - p * p.transpose();
    let inv = cov
        .try_inverse()
        .ok_or_else(|| Error::DegenerateDose { dose: x, detail: "P - pp^T singular".into() })?;
    let j = cell_jacobian(params, x);
    let inv = DMatrix::from_column_slice(3, 3, inv.as_slice());
    Ok(linalg::symmetrize(&(&j * inv * j.transpose())))
}

/// `M(xi) = sum w_i mu(x_i)`.
pub fn fisher_info(params: &BpParams, design: &Design) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(4, 4);
    for (x, w) in design.all_points() {
        if w > 0.0 {
            m += elemental_info(params, x)? * w;
        }
    }
    Ok(m)
}

/// Dose minimising `w (phi_1(x) - phi_1*)^2 + (1 - w)(phi_2(x) - phi_2*)^2` in probit units.
pub fn x_star(params: &BpParams, targets: &BpTargets) -> Result<f64> {
    let (num, den) = x_star_parts(params, targets)?;
    Ok(num / den)
}

fn quantiles(targets: &BpTargets) -> Result<(f64, f64)> {
    targets.validate()?;
    let n = Normal::standard();
    Ok((n.inverse_cdf(targets.p_eff_star), n.inverse_cdf(targets.p_tox_star)))
}

fn x_star_parts(params: &BpParams, targets: &BpTargets) -> Result<(f64, f64)> {
    let (q1, q2) = quantiles(targets)?;
    let [t11, t12, t21, t22] = params.theta();
    let w = targets.w;
    let num = (1.0 - w) * t22 * (q2 - t21) + w * t12 * (q1 - t11);
    let den = w * t12 * t12 + (1.0 - w) * t22 * t22;
    if den.abs() < 1e-300 {
        return Err(Error::Singular("the target-dose denominator vanishes".into()));
    }
    Ok((num, den))
}

/// Gradient of [`x_star`] with respect to `(theta11, theta12, theta21, theta22)`.
pub fn l_gradient(params: &BpParams, targets: &BpTargets) -> Result<DVector<f64>> {
    let (q1, q2) = quantiles(targets)?;
    let (num, den) = x_star_parts(params, targets)?;
    let [t11, t12, t21, t22] = params.theta();
    let w = targets.w;
    let dnum = [-w * t12, w * (q1 - t11), -(1.0 - w) * t22, (1.0 - w) * (q2 - t21)];
    let dden = [0.0, 2.0 * w * t12, 0.0, 2.0 * (1.0 - w) * t22];
    Ok(DVector::from_iterator(4, (0..4).map(|i| (dnum[i] * den - num * dden[i]) / (den * den))))
}

/// `L^T M^{-1} L`, `+inf` when `M` is singular.
pub fn phi_l(m: &DMatrix<f64>, params: &BpParams, targets: &BpTargets) -> Result<f64> {
    let l = l_gradient(params, targets)?;
    Ok(match linalg::spd_inverse(m) {
        Some(inv) => l.dot(&(inv * &l)),
        None => f64::INFINITY,
    })
}

/// `p1.^{-CE} (1 - p.1)^{-CT}`.
pub fn penalty(params: &BpParams, x: f64, ce: f64, ct: f64) -> Result<f64> {
    let (a, b) = params.predictors(x);
    let eff = norm_cdf(a);
    let no_tox = 1.0 - norm_cdf(b);
    if ce == 0.0 && ct == 0.0 {
        return Ok(1.0);
    }
    if !(eff > 0.0) || !(no_tox > 0.0) {
        return Err(Error::DegenerateDose { dose: x, detail: "infinite penalty".into() });
    }
    Ok(eff.powf(-ce) * no_tox.powf(-ct))
}

/// Design-averaged penalty `sum w_i phi(x_i)`.
pub fn total_penalty(params: &BpParams, design: &Design, ce: f64, ct: f64) -> Result<f64> {
    design.all_points().map(|(x, w)| Ok(w * penalty(params, x, ce, ct)?)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BpCriterion {
    D,
    L,
}

/// `-log det M` (smaller is better), `+inf` when singular.
pub fn d_value(m: &DMatrix<f64>) -> f64 {
    -linalg::log_det(m)
}

/// Criterion of the penalised information `M / Phi`: `-log det(M / Phi)` for D and
/// `Phi L^T M^{-1} L` for L. Smaller is better; `CE = CT = 0` gives the plain criterion.
pub fn penalized_criterion(
    design: &Design,
    params: &BpParams,
    targets: &BpTargets,
    kind: BpCriterion,
) -> Result<f64> {
    let m = fisher_info(params, design)?;
    let phi = total_penalty(params, design, targets.ce, targets.ct)?;
    Ok(match kind {
        BpCriterion::D => {
            let ld = linalg::log_det(&m);
            if phi == 1.0 {
                -ld
            } else {
                -(ld - 4.0 * phi.ln())
            }
        }
        BpCriterion::L => {
            let v = phi_l(&m, params, targets)?;
            if phi == 1.0 {
                v
            } else {
                phi * v
            }
        }
    })
}

/// Locally optimal design (smallest criterion) by PSO; with `stage1 = Some((xi1, alpha))`
/// only the stage-two part is optimised and the criterion is taken on
/// `alpha xi1 + (1 - alpha) xi2`.
pub fn bp_design(
    params: &BpParams,
    targets: &BpTargets,
    kind: BpCriterion,
    config: &SwarmConfig,
    stage1: Option<(&Design, f64)>,
) -> Result<SwarmResult> {
    params.validate()?;
    targets.validate()?;
    let objective = |d: &Design| -> f64 {
        let combined = match stage1 {
            Some((s1, a)) => s1.mixture(d, 1.0 - a),
            None => d.clone(),
        };
        match penalized_criterion(&combined, params, targets, kind) {
            Ok(v) if v.is_finite() => -v,
            _ => f64::NEG_INFINITY,
        }
    };
    let mut r = pso::optimize(&objective, config, &[])?;
    r.value = -r.value;
    for v in &mut r.trace {
        *v = -*v;
    }
    Ok(r)
}

/// Default dose box for the probit scenario.
pub fn default_bp_box() -> [f64; 2] {
    [0.0, 1.5]
}
