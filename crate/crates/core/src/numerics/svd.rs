//! Thin singular value decomposition, delegated to `faer` in 64-bit precision.

use super::matrix::Mat;
use super::to_faer;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `A = U diag(s) V^T` with `r = min(rows, cols)` singular triplets, `s` descending.
#[derive(Debug, Clone)]
pub struct Svd<T> {
    pub u: Mat<T>,
    pub s: Vec<T>,
    pub v: Mat<T>,
}

pub fn svd<T: Real>(a: &Mat<T>) -> Result<Svd<T>> {
    if !a.is_finite() {
        return Err(Error::NonFinite {
            what: "svd input".into(),
        });
    }
    let (m, n) = a.shape();
    let r = m.min(n);
    if r == 0 {
        return Ok(Svd {
            u: Mat::zeros(m, 0),
            s: Vec::new(),
            v: Mat::zeros(n, 0),
        });
    }
    let d = to_faer(a).thin_svd().map_err(|e| Error::NonFinite {
        what: format!("SVD did not converge: {e:?}"),
    })?;
    let (s, u, v) = (d.S().column_vector(), d.U(), d.V());
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
    Ok(Svd {
        u: Mat::from_fn(m, r, |i, c| T::lit(u[(i, order[c])])),
        s: order.iter().map(|&i| T::lit(s[i])).collect(),
        v: Mat::from_fn(n, r, |i, c| T::lit(v[(i, order[c])])),
    })
}
