//! Dense linear-algebra kernel: covariance estimation, regularized inverse
//! square roots, eigen/singular value decompositions and the closed-form CCA
//! solver shared by the correlation loss and the fusion layer.

mod cca;
pub mod eigen;
pub mod matrix;
pub mod svd;

pub use cca::{
    cca_from_moments, cca_solve, total_correlation, whitened_cross, CcaSolution, WhitenedCross,
};
pub use eigen::{eigh, SymEigen};
pub use matrix::{mul, mul_tr, tr_mul, Mat};
pub use svd::{svd, Svd};

/// Copies into a 64-bit `faer` matrix.
pub(crate) fn to_faer<T: Real>(m: &Mat<T>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j).to_f64().unwrap())
}

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Default ridge added to both auto-covariances before whitening.
pub const DEFAULT_RIDGE: f64 = 1e-4;

/// Eigenvalues at or below this bound make a whitening matrix singular.
pub const SINGULAR_EIGENVALUE: f64 = 1e-12;

/// `(1/(n-1)) X^T Y`, with column-mean centering when `center` is set.
pub fn covariance<T: Real>(x: &Mat<T>, y: &Mat<T>, center: bool) -> Result<Mat<T>> {
    if x.rows() != y.rows() {
        return Err(Error::shape(
            "covariance",
            format!("{} rows", x.rows()),
            y.rows(),
        ));
    }
    let n = x.rows();
    if n < 2 {
        return Err(Error::DegenerateSample {
            op: "covariance",
            n,
            min: 2,
        });
    }
    let mut c = if center {
        let xc = x.centered();
        if std::ptr::eq(x, y) {
            tr_mul(&xc, &xc)
        } else {
            tr_mul(&xc, &y.centered())
        }
    } else {
        tr_mul(x, y)
    };
    c.scale_in_place(T::one() / T::from_usize(n - 1).unwrap());
    Ok(c)
}

/// `(m + ridge I)^(-1/2)` via symmetric eigendecomposition.
///
/// The input is symmetrized first; the result is exactly symmetric.
pub fn inv_sqrt_sym<T: Real>(m: &Mat<T>, ridge: T) -> Result<Mat<T>> {
    if m.rows() != m.cols() {
        return Err(Error::shape(
            "inv_sqrt_sym",
            "square matrix",
            format!("{}x{}", m.rows(), m.cols()),
        ));
    }
    if ridge < T::zero() || !ridge.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "ridge must be finite and >= 0, got {ridge}"
        )));
    }
    let asym = m.asymmetry();
    if asym > T::lit(1e-10) * T::one().max(m.max_abs()) {
        return Err(Error::NotSymmetric {
            max_asymmetry: asym.to_f64().unwrap_or(f64::NAN),
        });
    }
    let mut reg = m.symmetrized();
    reg.add_diag(ridge);
    let eig = eigh(&reg)?;
    if let Some(&smallest) = eig.values.first() {
        if smallest <= T::lit(SINGULAR_EIGENVALUE) {
            return Err(Error::Singular {
                eigenvalue: smallest.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    let d = m.rows();
    let v = &eig.vectors;
    let inv_roots: Vec<T> = eig.values.iter().map(|&l| T::one() / l.sqrt()).collect();
    let scaled = Mat::from_fn(d, d, |i, j| v.get(i, j) * inv_roots[j]);
    Ok(mul_tr(&scaled, v).symmetrized())
}
