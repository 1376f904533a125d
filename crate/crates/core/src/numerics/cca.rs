use super::matrix::{mul, Mat};
use super::svd::{svd, Svd};
use super::{covariance, inv_sqrt_sym};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Canonical directions for two views, ordered by decreasing correlation.
#[derive(Debug, Clone)]
pub struct CcaSolution<T> {
    /// `dx x k`; columns are orthonormal under the regularized `Sxx`.
    pub wx: Mat<T>,
    /// `dy x k`; columns are orthonormal under the regularized `Syy`.
    pub wy: Mat<T>,
    /// Canonical correlations in `[0, 1]`, non-increasing.
    pub correlations: Vec<T>,
    pub x_mean: Vec<T>,
    pub y_mean: Vec<T>,
}

impl<T: Real> CcaSolution<T> {
    pub fn k(&self) -> usize {
        self.correlations.len()
    }

    /// Centers `x` with the fitted mean and projects onto `wx`.
    pub fn project_x(&self, x: &Mat<T>) -> Result<Mat<T>> {
        project(x, &self.x_mean, &self.wx, "CcaSolution::project_x")
    }

    pub fn project_y(&self, y: &Mat<T>) -> Result<Mat<T>> {
        project(y, &self.y_mean, &self.wy, "CcaSolution::project_y")
    }
}

fn project<T: Real>(x: &Mat<T>, mean: &[T], w: &Mat<T>, op: &'static str) -> Result<Mat<T>> {
    if x.cols() != w.rows() {
        return Err(Error::shape(op, format!("{} columns", w.rows()), x.cols()));
    }
    Ok(mul(&x.sub_row_vector(mean), w))
}

/// Whitening matrices and the whitened cross-covariance
/// `T = Sxx^(-1/2) Sxy Syy^(-1/2)` together with its SVD.
#[derive(Debug, Clone)]
pub struct WhitenedCross<T> {
    pub kx: Mat<T>,
    pub ky: Mat<T>,
    pub t: Mat<T>,
    pub svd: Svd<T>,
}

pub fn whitened_cross<T: Real>(
    sxx: &Mat<T>,
    syy: &Mat<T>,
    sxy: &Mat<T>,
    ridge: T,
) -> Result<WhitenedCross<T>> {
    if sxy.shape() != (sxx.rows(), syy.rows()) {
        return Err(Error::shape(
            "whitened_cross",
            format!("{}x{} cross-covariance", sxx.rows(), syy.rows()),
            format!("{}x{}", sxy.rows(), sxy.cols()),
        ));
    }
    let kx = inv_sqrt_sym(sxx, ridge)?;
    let ky = inv_sqrt_sym(syy, ridge)?;
    let t = mul(&mul(&kx, sxy), &ky);
    let svd = svd(&t)?;
    Ok(WhitenedCross { kx, ky, t, svd })
}

/// CCA from precomputed second moments.
pub fn cca_from_moments<T: Real>(
    sxx: &Mat<T>,
    syy: &Mat<T>,
    sxy: &Mat<T>,
    x_mean: Vec<T>,
    y_mean: Vec<T>,
    k: usize,
    ridge: T,
) -> Result<CcaSolution<T>> {
    let (dx, dy) = (sxx.rows(), syy.rows());
    if k == 0 || k > dx.min(dy) {
        return Err(Error::InvalidConfig(format!(
            "CCA needs 1 <= k <= min(dx, dy) = {}, got k = {k}",
            dx.min(dy)
        )));
    }
    let wc = whitened_cross(sxx, syy, sxy, ridge)?;
    let u_k = wc.svd.u.select_cols(0..k);
    let v_k = wc.svd.v.select_cols(0..k);
    let mut wx = mul(&wc.kx, &u_k);
    let mut wy = mul(&wc.ky, &v_k);
    let correlations = wc.svd.s[..k]
        .iter()
        .map(|&s| s.max(T::zero()).min(T::one()))
        .collect();

    // Fix the sign of each canonical pair: largest-magnitude entry of wx positive.
    for j in 0..k {
        let mut best = T::zero();
        for i in 0..dx {
            let v = wx.get(i, j);
            if v.abs() > best.abs() {
                best = v;
            }
        }
        if best < T::zero() {
            for i in 0..dx {
                wx.set(i, j, -wx.get(i, j));
            }
            for i in 0..dy {
                wy.set(i, j, -wy.get(i, j));
            }
        }
    }

    Ok(CcaSolution {
        wx,
        wy,
        correlations,
        x_mean,
        y_mean,
    })
}

/// Canonical correlation analysis of paired rows of `x` and `y`.
///
/// Correlations are the top-`k` singular values of the whitened
/// cross-covariance, clamped to `[0, 1]`.
pub fn cca_solve<T: Real>(x: &Mat<T>, y: &Mat<T>, k: usize, ridge: T) -> Result<CcaSolution<T>> {
    if x.rows() != y.rows() {
        return Err(Error::shape(
            "cca_solve",
            format!("{} rows", x.rows()),
            y.rows(),
        ));
    }
    let n = x.rows();
    if n <= x.cols().max(y.cols()) {
        log::warn!(
            "cca_solve: {n} samples for {}+{} dimensions; correlations will be inflated",
            x.cols(),
            y.cols()
        );
    }
    let sxx = covariance(x, x, true)?;
    let syy = covariance(y, y, true)?;
    let sxy = covariance(x, y, true)?;
    cca_from_moments(
        &sxx,
        &syy,
        &sxy,
        x.column_means(),
        y.column_means(),
        k,
        ridge,
    )
}

/// Sum of all canonical correlations between the columns of `x` and `y`
/// (the nuclear norm of the whitened batch cross-covariance).
pub fn total_correlation<T: Real>(x: &Mat<T>, y: &Mat<T>, ridge: T) -> Result<T> {
    if x.shape() != y.shape() {
        return Err(Error::shape(
            "total_correlation",
            format!("{}x{}", x.rows(), x.cols()),
            format!("{}x{}", y.rows(), y.cols()),
        ));
    }
    if x.rows() <= x.cols() {
        return Err(Error::BatchTooSmall {
            batch: x.rows(),
            k: x.cols(),
        });
    }
    let sxx = covariance(x, x, true)?;
    let syy = covariance(y, y, true)?;
    let sxy = covariance(x, y, true)?;
    let wc = whitened_cross(&sxx, &syy, &sxy, ridge)?;
    Ok(wc.svd.s.iter().copied().sum())
}
