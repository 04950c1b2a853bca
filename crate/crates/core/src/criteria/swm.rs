//! Mixing a rank-k elemental matrix `s0 s0^T` into `M1` via Sherman-Morrison-Woodbury.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

fn check(m1: &DMatrix<f64>, s0: &DMatrix<f64>, alpha: f64) -> Result<()> {
    if !m1.is_square() || m1.nrows() != s0.nrows() {
        return Err(Error::Dimension(format!(
            "M1 is {}x{}, s0 is {}x{}",
            m1.nrows(),
            m1.ncols(),
            s0.nrows(),
            s0.ncols()
        )));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid(format!("mixing proportion {alpha} outside [0, 1)")));
    }
    Ok(())
}

/// `log det((1 - alpha) M1 + alpha s0 s0^T)
///  = p log(1 - alpha) + log det M1 + log det(I + alpha/(1 - alpha) s0^T M1^{-1} s0)`.
pub fn swm_augmented_log_det(m1: &DMatrix<f64>, s0: &DMatrix<f64>, alpha: f64) -> Result<f64> {
    check(m1, s0, alpha)?;
    let chol = linalg::checked_cholesky(m1).ok_or_else(|| Error::Singular("M1".into()))?;
    let p = m1.nrows() as f64;
    let k = s0.ncols();
    let inner = DMatrix::identity(k, k) + s0.transpose() * chol.solve(s0) * (alpha / (1.0 - alpha));
    let small = inner.determinant();
    if !(small > 0.0) {
        return Err(Error::Singular("I + a/(1-a) s0^T M1^-1 s0".into()));
    }
    let log_det_m1 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(p * (1.0 - alpha).ln() + log_det_m1 + small.ln())
}

/// `det((1 - alpha) M1 + alpha s0 s0^T)` through the low-rank identity.
pub fn swm_augmented_det(m1: &DMatrix<f64>, s0: &DMatrix<f64>, alpha: f64) -> Result<f64> {
    swm_augmented_log_det(m1, s0, alpha).map(f64::exp)
}

/// `c^T ((1 - alpha) M1 + alpha s0 s0^T)^{-1} c`
/// `= c^T M1^{-1} c / (1 - alpha)
///    - alpha/(1 - alpha)^2 c^T M1^{-1} s0 (I + alpha/(1 - alpha) s0^T M1^{-1} s0)^{-1} s0^T M1^{-1} c`.
pub fn swm_augmented_cvar(
    m1: &DMatrix<f64>,
    s0: &DMatrix<f64>,
    alpha: f64,
    c: &DVector<f64>,
) -> Result<f64> {
    check(m1, s0, alpha)?;
    if c.len() != m1.nrows() {
        return Err(Error::Dimension(format!("c has length {}, expected {}", c.len(), m1.nrows())));
    }
    let chol = linalg::checked_cholesky(m1).ok_or_else(|| Error::Singular("M1".into()))?;
    let k = s0.ncols();
    let m1c = chol.solve(c);
    let m1s = chol.solve(s0);
    let r = alpha / (1.0 - alpha);
    let inner = DMatrix::identity(k, k) + s0.transpose() * &m1s * r;
    let u = s0.transpose() * &m1c;
    let w = inner
        .lu()
        .solve(&u)
        .ok_or_else(|| Error::Singular("I + a/(1-a) s0^T M1^-1 s0".into()))?;
    let base = c.dot(&m1c) / (1.0 - alpha);
    Ok(base - alpha / ((1.0 - alpha) * (1.0 - alpha)) * u.dot(&w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_mixing_is_the_plain_matrix() {
        let m1 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s0 = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let c = DVector::from_vec(vec![0.3, 0.7]);
        let d = swm_augmented_det(&m1, &s0, 0.0).unwrap();
        assert!((d - m1.determinant()).abs() < 1e-12);
        let v = swm_augmented_cvar(&m1, &s0, 0.0, &c).unwrap();
        let direct = c.dot(&(m1.clone().try_inverse().unwrap() * &c));
        assert!((v - direct).abs() < 1e-12);
    }

    #[test]
    fn rejects_singular_base() {
        let m1 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let s0 = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        assert!(swm_augmented_det(&m1, &s0, 0.3).is_err());
    }
}
