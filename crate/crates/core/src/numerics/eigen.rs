//! Symmetric eigendecomposition, delegated to `faer` in 64-bit precision.

use super::matrix::Mat;
use super::to_faer;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEigen<T> {
    pub values: Vec<T>,
    /// Column `j` is the unit eigenvector for `values[j]`.
    pub vectors: Mat<T>,
}

/// Decomposes `(m + m^T) / 2`.
pub fn eigh<T: Real>(m: &Mat<T>) -> Result<SymEigen<T>> {
    if m.rows() != m.cols() {
        return Err(Error::shape(
            "eigh",
            "square matrix",
            format!("{}x{}", m.rows(), m.cols()),
        ));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite {
            what: "eigh input".into(),
        });
    }
    let n = m.rows();
    if n == 0 {
        return Ok(SymEigen {
            values: Vec::new(),
            vectors: Mat::zeros(0, 0),
        });
    }
    let evd = to_faer(&m.symmetrized())
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::NonFinite {
            what: format!("eigendecomposition did not converge: {e:?}"),
        })?;
    let (s, u) = (evd.S().column_vector(), evd.U());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b)));
    Ok(SymEigen {
        values: order.iter().map(|&i| T::lit(s[i])).collect(),
        vectors: Mat::from_fn(n, n, |r, c| T::lit(u[(r, order[c])])),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::matrix::{mul, mul_tr};

    fn random_sym(n: usize, seed: u64) -> Mat<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let a = Mat::from_fn(n, n, |_, _| next());
        a.add(&a.transpose())
    }

    #[test]
    fn reconstructs_random_symmetric_matrices() {
        for (n, seed) in [(1, 1), (2, 2), (5, 3), (17, 4), (40, 5)] {
            let m = random_sym(n, seed);
            let eig = eigh(&m).unwrap();
            let v = &eig.vectors;
            let recon = mul_tr(&mul(v, &Mat::from_diag(&eig.values)), v);
            assert!(recon.max_abs_diff(&m) < 1e-11, "n={n}");
            let vtv = crate::numerics::matrix::tr_mul(v, v);
            assert!(vtv.max_abs_diff(&Mat::identity(n)) < 1e-12, "n={n}");
            assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn diagonal_and_repeated_eigenvalues() {
        let m = Mat::from_diag(&[3.0, 1.0, 2.0]);
        assert_eq!(eigh(&m).unwrap().values, vec![1.0, 2.0, 3.0]);

        let eig = eigh(&Mat::<f64>::identity(6).scale(2.5)).unwrap();
        assert!(eig.values.iter().all(|&v| (v - 2.5).abs() < 1e-14));
    }

    #[test]
    fn zero_matrix() {
        let eig = eigh(&Mat::<f64>::zeros(4, 4)).unwrap();
        assert!(eig.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_non_finite_and_non_square() {
        let mut m = Mat::<f64>::identity(3);
        m.set(1, 1, f64::NAN);
        assert!(matches!(eigh(&m), Err(Error::NonFinite { .. })));
        assert!(eigh(&Mat::<f64>::zeros(2, 3)).is_err());
    }

    #[test]
    fn single_precision() {
        let m = random_sym(8, 9).cast::<f32>();
        let eig = eigh(&m).unwrap();
        let recon = mul_tr(
            &mul(&eig.vectors, &Mat::from_diag(&eig.values)),
            &eig.vectors,
        );
        assert!(recon.max_abs_diff(&m) < 1e-4);
    }
}
