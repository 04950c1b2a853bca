//! Small dense helpers on top of nalgebra for symmetric positive (semi)definite matrices.

use nalgebra::{DMatrix, DVector};

/// Relative eigenvalue threshold below which a PSD matrix is treated as singular.
pub const SINGULAR_RTOL: f64 = 1e-12;

/// Inverse of a symmetric positive definite matrix, `None` if the Cholesky factorization fails
/// or the matrix is numerically singular.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    checked_cholesky(m).map(|c| c.inverse())
}

/// Cholesky factorization that also rejects pivots that are tiny relative to the largest diagonal
/// entry, so rank-deficient PSD matrices are reported as singular instead of yielding huge inverses.
pub fn checked_cholesky(m: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = m.diagonal().iter().fold(0.0_f64, |a, &b| a.max(b));
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let chol = m.clone().cholesky()?;
    let tiny = chol.l_dirty().diagonal().iter().any(|d| d * d <= SINGULAR_RTOL * scale);
    if tiny {
        None
    } else {
        Some(chol)
    }
}

/// `log det m` for a symmetric matrix, `-inf` when it is not positive definite.
pub fn log_det(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    match checked_cholesky(m) {
        Some(c) => 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
        None => f64::NEG_INFINITY,
    }
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// A PSD matrix is singular when its smallest eigenvalue is below `SINGULAR_RTOL` times the largest.
pub fn is_numerically_singular(m: &DMatrix<f64>) -> bool {
    let ev = sym_eigenvalues(m);
    match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) => hi <= 0.0 || lo <= SINGULAR_RTOL * hi,
        _ => true,
    }
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix through its eigen-decomposition.
pub fn psd_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let hi = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > SINGULAR_RTOL * hi && lambda > 0.0 {
            let v = eig.eigenvectors.column(i);
            out += (v * v.transpose()) / lambda;
        }
    }
    out
}

/// Whether `c` lies in the column space of the symmetric PSD matrix `m`.
pub fn in_column_space(m: &DMatrix<f64>, c: &DVector<f64>) -> bool {
    let pinv = psd_pinv(m);
    let proj = m * (&pinv * c);
    (proj - c).norm() <= 1e-7 * c.norm().max(1e-300)
}

/// `(m + m^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Convert a matrix to nested rows for serialization.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Build a matrix from nested rows; all rows must share a length.
pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return None;
    }
    Some(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}
