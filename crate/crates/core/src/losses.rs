//! Correlation, discriminative and orthogonality losses with gradients
//! with respect to the branch outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::SubspaceOutputs;
use crate::numerics::{mul, mul_tr, tr_mul, whitened_cross, Mat};
use crate::scalar::Real;

/// Weight of the discriminative term.
pub const DEFAULT_ALPHA: f64 = 0.01;
/// Weight of the orthogonality term.
pub const DEFAULT_BETA: f64 = 0.001;

/// One evaluation of the composite objective.
///
/// `total = corr + alpha * dis + beta * cons`, computed in `f64` from the
/// stored components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub corr: f64,
    pub dis: f64,
    pub cons: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl LossBreakdown {
    pub fn new(corr: f64, dis: f64, cons: f64, alpha: f64, beta: f64) -> Self {
        Self {
            corr,
            dis,
            cons,
            total: corr + alpha * dis + beta * cons,
            alpha,
            beta,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.corr.is_finite()
            && self.dis.is_finite()
            && self.cons.is_finite()
            && self.total.is_finite()
    }
}

/// Term weights of the objective. `corr` is 1 except in the implicit-only ablation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub corr: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            corr: 1.0,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
        }
    }
}

/// Negated, `k`-normalized sum of canonical correlations between the two
/// explicit outputs, in `[-1, 0]`, with gradients for both inputs.
pub fn corr_loss<T: Real>(
    s_ex_a: &Mat<T>,
    s_ex_v: &Mat<T>,
    ridge: T,
) -> Result<(T, Mat<T>, Mat<T>)> {
    if s_ex_a.shape() != s_ex_v.shape() {
        return Err(Error::shape(
            "corr_loss",
            format!("{}x{}", s_ex_a.rows(), s_ex_a.cols()),
            format!("{}x{}", s_ex_v.rows(), s_ex_v.cols()),
        ));
    }
    let (b, k) = s_ex_a.shape();
    if b <= k {
        return Err(Error::BatchTooSmall { batch: b, k });
    }
    let ac = s_ex_a.centered();
    let vc = s_ex_v.centered();
    let inv_n = T::one() / T::from_usize(b - 1).unwrap();
    let saa = tr_mul(&ac, &ac).scale(inv_n);
    let svv = tr_mul(&vc, &vc).scale(inv_n);
    let sav = tr_mul(&ac, &vc).scale(inv_n);
    let wc = whitened_cross(&saa, &svv, &sav, ridge)?;
    let total: T = wc.svd.s.iter().copied().sum();

    let ku = mul(&wc.kx, &wc.svd.u);
    let kv = mul(&wc.ky, &wc.svd.v);
    let d = Mat::from_diag(&wc.svd.s);
    let half = T::lit(0.5);
    // dF/dSav, and dF/dSaa, dF/dSvv (symmetric, the latter two negative semidefinite).
    let d12 = mul_tr(&ku, &kv);
    let d11 = mul_tr(&mul(&ku, &d), &ku).scale(-half);
    let d22 = mul_tr(&mul(&kv, &d), &kv).scale(-half);

    let two = T::lit(2.0);
    let mut ga = mul(&ac, &d11).scale(two);
    ga = ga.add(&mul_tr(&vc, &d12));
    let mut gv = mul(&vc, &d22).scale(two);
    gv = gv.add(&mul(&ac, &d12));
    let s = -inv_n / T::from_usize(k).unwrap();
    ga.scale_in_place(s);
    gv.scale_in_place(s);
    Ok((-total / T::from_usize(k).unwrap(), ga, gv))
}

/// `||S_a - Y||_F / b + ||S_v - Y||_F / b` (unsquared norms).
pub fn dis_loss<T: Real>(
    s_im_a: &Mat<T>,
    s_im_v: &Mat<T>,
    labels: &Mat<T>,
) -> Result<(T, Mat<T>, Mat<T>)> {
    for s in [s_im_a, s_im_v] {
        if s.shape() != labels.shape() {
            return Err(Error::shape(
                "dis_loss",
                format!("{}x{} (batch x classes)", labels.rows(), labels.cols()),
                format!("{}x{}", s.rows(), s.cols()),
            ));
        }
    }
    let (va, ga) = norm_term(s_im_a, labels);
    let (vv, gv) = norm_term(s_im_v, labels);
    Ok((va + vv, ga, gv))
}

fn norm_term<T: Real>(s: &Mat<T>, y: &Mat<T>) -> (T, Mat<T>) {
    let b = T::from_usize(s.rows()).unwrap();
    let diff = s.sub(y);
    let norm = diff.frobenius_norm();
    if norm < T::lit(1e-12) {
        return (norm / b, Mat::zeros(s.rows(), s.cols()));
    }
    (norm / b, diff.scale(T::one() / (b * norm)))
}

/// Normalized squared Frobenius norms of the three orthogonality products.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orthogonality {
    /// `||Q_ex^a' Q_im^a||^2 / b^2`
    pub audio: f64,
    /// `||Q_ex^v' Q_im^v||^2 / b^2`
    pub visual: f64,
    /// `||Q_im^a' Q_im^v||^2 / b^2`
    pub implicit_cross: f64,
}

pub fn orthogonality<T: Real>(out: &SubspaceOutputs<T>) -> Result<Orthogonality> {
    check_outputs(out)?;
    let b2 = (out.batch_size() as f64).powi(2);
    let term = |a: &Mat<T>, b: &Mat<T>| tr_mul(a, b).frobenius_norm_sq().to_f64().unwrap() / b2;
    Ok(Orthogonality {
        audio: term(&out.s_ex_a, &out.s_im_a),
        visual: term(&out.s_ex_v, &out.s_im_v),
        implicit_cross: term(&out.s_im_a, &out.s_im_v),
    })
}

fn check_outputs<T: Real>(out: &SubspaceOutputs<T>) -> Result<()> {
    let shape = out.s_ex_a.shape();
    for m in [&out.s_ex_v, &out.s_im_a, &out.s_im_v] {
        if m.shape() != shape {
            return Err(Error::shape(
                "cons_loss",
                format!("{}x{}", shape.0, shape.1),
                format!("{}x{}", m.rows(), m.cols()),
            ));
        }
    }
    Ok(())
}

/// Orthogonality constraint between explicit and implicit outputs of each
/// modality and between the two implicit outputs, normalized by `b^2`.
pub fn cons_loss<T: Real>(out: &SubspaceOutputs<T>) -> Result<(T, SubspaceOutputs<T>)> {
    check_outputs(out)?;
    let b = out.batch_size();
    let inv_b2 = T::one() / T::from_usize(b * b).unwrap();
    let two = T::lit(2.0) * inv_b2;

    let ea_ia = tr_mul(&out.s_ex_a, &out.s_im_a);
    let ev_iv = tr_mul(&out.s_ex_v, &out.s_im_v);
    let ia_iv = tr_mul(&out.s_im_a, &out.s_im_v);
    let value = (ea_ia.frobenius_norm_sq() + ev_iv.frobenius_norm_sq() + ia_iv.frobenius_norm_sq())
        * inv_b2;

    // d||A'B||^2/dA = 2 B (A'B)' and d/dB = 2 A (A'B).
    let g_ex_a = mul_tr(&out.s_im_a, &ea_ia).scale(two);
    let g_ex_v = mul_tr(&out.s_im_v, &ev_iv).scale(two);
    let mut g_im_a = mul(&out.s_ex_a, &ea_ia).scale(two);
    g_im_a.axpy(two, &mul_tr(&out.s_im_v, &ia_iv));
    let mut g_im_v = mul(&out.s_ex_v, &ev_iv).scale(two);
    g_im_v.axpy(two, &mul(&out.s_im_a, &ia_iv));
    Ok((
        value,
        SubspaceOutputs {
            s_ex_a: g_ex_a,
            s_ex_v: g_ex_v,
            s_im_a: g_im_a,
            s_im_v: g_im_v,
        },
    ))
}

/// `corr + alpha * dis + beta * cons` and its gradient.
pub fn total_loss<T: Real>(
    out: &SubspaceOutputs<T>,
    labels: &Mat<T>,
    alpha: f64,
    beta: f64,
    ridge: T,
) -> Result<(LossBreakdown, SubspaceOutputs<T>)> {
    weighted_loss(
        out,
        labels,
        LossWeights {
            corr: 1.0,
            alpha,
            beta,
        },
        ridge,
    )
}

/// Objective with an explicit weight on the correlation term. A zero
/// correlation weight skips that term entirely and reports it as `0`.
pub fn weighted_loss<T: Real>(
    out: &SubspaceOutputs<T>,
    labels: &Mat<T>,
    w: LossWeights,
    ridge: T,
) -> Result<(LossBreakdown, SubspaceOutputs<T>)> {
    let (b, k) = out.s_ex_a.shape();
    let mut grads = SubspaceOutputs::zeros(b, k);
    let mut corr = 0.0;
    if w.corr != 0.0 {
        let (v, ga, gv) = corr_loss(&out.s_ex_a, &out.s_ex_v, ridge)?;
        corr = w.corr * v.to_f64().unwrap();
        let c = T::lit(w.corr);
        grads.s_ex_a = ga.scale(c);
        grads.s_ex_v = gv.scale(c);
    }
    let (dis, ga, gv) = dis_loss(&out.s_im_a, &out.s_im_v, labels)?;
    let alpha = T::lit(w.alpha);
    grads.s_im_a.axpy(alpha, &ga);
    grads.s_im_v.axpy(alpha, &gv);

    let (cons, g) = cons_loss(out)?;
    let beta = T::lit(w.beta);
    for br in crate::network::Branch::ALL {
        grads.get_mut(br).axpy(beta, g.get(br));
    }
    let breakdown = LossBreakdown::new(
        corr,
        dis.to_f64().unwrap(),
        cons.to_f64().unwrap(),
        w.alpha,
        w.beta,
    );
    Ok((breakdown, grads))
}
