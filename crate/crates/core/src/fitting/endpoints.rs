//! RD50, LD50 and their ratio for the trinomial proportional odds model `(c1, c2, b)`,
//! with delta-method standard errors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ParamVector;

/// Upper end of the default RD50 search interval on the log1p scale: the largest raw dose
/// used in practice (30000) plus a margin.
pub fn default_rd50_upper() -> f64 {
    30000f64.ln_1p() + 5.0
}

/// Number of scan cells used to bracket the first root before bisection.
const SCAN_CELLS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointKind {
    Rd50,
    Ld50,
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointEstimate {
    pub kind: EndpointKind,
    /// Transformed-scale dose (or the dimensionless ratio).
    pub value: f64,
    pub se: f64,
}

/// How the matrix handed to [`endpoint_variance`] should be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpreadMatrix {
    /// A parameter covariance matrix, used as is.
    Covariance,
    /// A Fisher information matrix, inverted first.
    Information,
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the logistic function.
fn logistic_slope(z: f64) -> f64 {
    let s = logistic(z);
    s * (1.0 - s)
}

fn unpack(theta: &ParamVector) -> Result<(f64, f64, f64)> {
    match theta.values() {
        [c1, c2, b] => Ok((*c1, *c2, *b)),
        v => Err(Error::Dimension(format!(
            "endpoints need the three trinomial parameters (c1, c2, b), got {}",
            v.len()
        ))),
    }
}

/// `pi_2(x) - 0.5`.
fn radial_excess(c1: f64, c2: f64, b: f64, x: f64) -> f64 {
    logistic(c2 + b * x) - logistic(c1 + b * x) - 0.5
}

/// Dose (transformed scale) at which the middle category reaches probability 0.5, searched on
/// `[0, default_rd50_upper()]`.
pub fn rd50(theta: &ParamVector) -> Result<f64> {
    rd50_in(theta, 0.0, default_rd50_upper())
}

/// RD50 on `[lo, hi]`: the first sign change on a fine scan, refined by bisection and a Newton
/// step. `pi_2` is unimodal, so the equation typically has two roots; the lower one is returned.
pub fn rd50_in(theta: &ParamVector, lo: f64, hi: f64) -> Result<f64> {
    let (c1, c2, b) = unpack(theta)?;
    if !(lo < hi) {
        return Err(Error::invalid(format!("empty RD50 bracket [{lo}, {hi}]")));
    }
    let f = |x: f64| radial_excess(c1, c2, b, x);
    let h = (hi - lo) / SCAN_CELLS as f64;
    let mut a = lo;
    let mut fa = f(a);
    if fa == 0.0 {
        return Ok(a);
    }
    let mut bracket = None;
    for i in 1..=SCAN_CELLS {
        let x = lo + h * i as f64;
        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fa.signum() != fx.signum() {
            bracket = Some((a, x));
            break;
        }
        a = x;
        fa = fx;
    }
    let (mut a, mut bb) = bracket.ok_or_else(|| {
        Error::NoRoot(format!(
            "middle-category probability never crosses 0.5 on [{lo}, {hi}] for theta = ({c1}, {c2}, {b})"
        ))
    })?;
    let mut fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + bb);
        let fm = f(m);
        if fm == 0.0 {
            a = m;
            bb = m;
            break;
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            bb = m;
        }
        if bb - a < 1e-15 * m.abs().max(1.0) {
            break;
        }
    }
    let mut x = 0.5 * (a + bb);
    let slope = b * (logistic_slope(c2 + b * x) - logistic_slope(c1 + b * x));
    if slope != 0.0 {
        let newton = x - f(x) / slope;
        if newton >= a - h && newton <= bb + h && f(newton).abs() <= f(x).abs() {
            x = newton;
        }
    }
    Ok(x)
}

/// Gradient of RD50 with respect to `(c1, c2, b)` by the implicit function theorem, with a
/// trailing zero for the normalisation constraint (length p + 1).
pub fn rd50_gradient(theta: &ParamVector) -> Result<Vec<f64>> {
    let (c1, c2, b) = unpack(theta)?;
    let x = rd50(theta)?;
    rd50_gradient_at(c1, c2, b, x)
}

fn rd50_gradient_at(c1: f64, c2: f64, b: f64, x: f64) -> Result<Vec<f64>> {
    let s1 = logistic_slope(c1 + b * x);
    let s2 = logistic_slope(c2 + b * x);
    let df_dx = b * (s2 - s1);
    if df_dx.abs() < 1e-300 || !df_dx.is_finite() {
        return Err(Error::Singular(format!("d pi_2 / dx vanishes at RD50 = {x}")));
    }
    let df = [-s1, s2, x * (s2 - s1)];
    let mut grad: Vec<f64> = df.iter().map(|d| -d / df_dx).collect();
    grad.push(0.0);
    Ok(grad)
}

/// Dose at which the last category reaches 0.5: `sigma(c2 + b x) = 0.5`, so `x = -c2 / b`.
pub fn ld50(theta: &ParamVector) -> Result<f64> {
    let (_, c2, b) = unpack(theta)?;
    if b == 0.0 {
        return Err(Error::Singular("LD50 is undefined for a zero slope".into()));
    }
    Ok(-c2 / b)
}

/// Gradient of LD50 with respect to `(c1, c2, b)`, plus the constraint zero.
pub fn ld50_gradient(theta: &ParamVector) -> Result<Vec<f64>> {
    let (_, c2, b) = unpack(theta)?;
    if b == 0.0 {
        return Err(Error::Singular("LD50 is undefined for a zero slope".into()));
    }
    Ok(vec![0.0, -1.0 / b, c2 / (b * b), 0.0])
}

/// Delta-method estimate of RD50, LD50 or LD50/RD50 from a covariance or information matrix
/// over the free parameters `(c1, c2, b)`.
pub fn endpoint_variance(
    theta: &ParamVector,
    matrix: &DMatrix<f64>,
    spread: SpreadMatrix,
    kind: EndpointKind,
) -> Result<EndpointEstimate> {
    let p = theta.len();
    if matrix.shape() != (p, p) {
        return Err(Error::Dimension(format!(
            "matrix is {}x{}, expected {p}x{p}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    let cov = match spread {
        SpreadMatrix::Covariance => matrix.clone(),
        SpreadMatrix::Information => linalg::spd_inverse(matrix)
            .ok_or_else(|| Error::Singular("information matrix is not invertible".into()))?,
    };
    let free = |g: Vec<f64>| DVector::from_column_slice(&g[..p]);
    let quad = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * &cov * b)[(0, 0)];
    let (value, var) = match kind {
        EndpointKind::Rd50 => {
            let g = free(rd50_gradient(theta)?);
            (rd50(theta)?, quad(&g, &g))
        }
        EndpointKind::Ld50 => {
            let g = free(ld50_gradient(theta)?);
            (ld50(theta)?, quad(&g, &g))
        }
        EndpointKind::Ratio => {
            let rd = rd50(theta)?;
            let ld = ld50(theta)?;
            let grd = free(rd50_gradient(theta)?);
            let gld = free(ld50_gradient(theta)?);
            let pair = DMatrix::from_row_slice(
                2,
                2,
                &[quad(&gld, &gld), quad(&gld, &grd), quad(&grd, &gld), quad(&grd, &grd)],
            );
            (ld / rd, ratio_variance(ld, rd, &pair))
        }
    };
    Ok(EndpointEstimate { kind, value, se: var.max(0.0).sqrt() })
}

/// Delta-method variance of `ld / rd` given the 2x2 covariance of `(ld, rd)`.
pub fn ratio_variance(ld: f64, rd: f64, cov: &DMatrix<f64>) -> f64 {
    let g = DVector::from_column_slice(&[1.0 / rd, -ld / (rd * rd)]);
    (g.transpose() * cov * &g)[(0, 0)]
}
