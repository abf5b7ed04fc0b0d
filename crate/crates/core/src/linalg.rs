//! Small dense complex helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Inverse of a Hermitian positive-definite matrix via Cholesky.
pub fn hpd_inverse(a: &CMatrix) -> Result<CMatrix> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "expected square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let not_pd = || Error::Numerical("matrix is not positive definite".into());
    let ch = a.clone().cholesky().ok_or_else(not_pd)?;
    // complex square roots never fail, so check the pivots are real and positive
    if ch.l_dirty().diagonal().iter().any(|d| !(d.re > 0.0) || d.im.abs() > 1e-12 * d.re) {
        return Err(not_pd());
    }
    Ok(ch.inverse())
}

/// Real part of the trace.
pub fn trace_re(a: &CMatrix) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

/// Squared Frobenius norm.
pub fn frobenius_sq(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Scales the identity: `s * I_n`.
pub fn scaled_identity(n: usize, s: f64) -> CMatrix {
    CMatrix::from_diagonal_element(n, n, c(s, 0.0))
}

/// `A * diag(d)` with a real diagonal.
pub fn scale_columns(a: &CMatrix, d: &[f64]) -> CMatrix {
    let mut out = a.clone();
    for (j, &s) in d.iter().enumerate() {
        out.column_mut(j).scale_mut(s);
    }
    out
}

/// Largest absolute entrywise difference.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Hermitian eigen-decomposition with eigenvalues sorted in descending order.
pub fn hermitian_eigen_desc(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = a.nrows();
    // symmetrize against roundoff before handing to the eigensolver
    let h = (a + a.adjoint()).scale(0.5);
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, k| eig.eigenvectors[(r, order[k])]);
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_hpd_matrix() {
        let a = CMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(3.0, 0.0)]);
        let inv = hpd_inverse(&a).unwrap();
        let prod = &a * &inv;
        assert!(max_abs_diff(&prod, &scaled_identity(2, 1.0)) < 1e-14);
    }

    #[test]
    fn inverse_rejects_indefinite() {
        let a = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(hpd_inverse(&a), Err(Error::Numerical(_))));
    }

    #[test]
    fn eigen_sorted_descending() {
        let a = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(5.0, 0.0)]);
        let (vals, vecs) = hermitian_eigen_desc(&a);
        assert!((vals[0] - 5.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
        assert!((vecs[(1, 0)].norm() - 1.0).abs() < 1e-12);
    }
}
