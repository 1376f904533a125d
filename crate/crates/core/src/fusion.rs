//! Closed-form linear CCA layer on top of the trained branches.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Modality};
use crate::error::{Error, Result};
use crate::network::ModelParams;
use crate::numerics::{cca_solve, mul, Mat};
use crate::scalar::Real;

/// Which branch outputs feed the fusion layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionInput {
    /// `[S_ex | S_im]` per modality (`2k` columns).
    #[default]
    Concat,
    /// `S_ex` only (`k` columns).
    Explicit,
}

/// Centering means and CCA projections for both modalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FusionTransform<T> {
    pub input: FusionInput,
    pub proj_audio: Mat<T>,
    pub proj_visual: Mat<T>,
    pub mean_audio: Vec<T>,
    pub mean_visual: Vec<T>,
    pub k_out: usize,
    /// Canonical correlations on the fit set, non-increasing.
    pub correlations: Vec<T>,
}

/// Branch outputs for one modality arranged as fusion input.
pub fn fusion_features<T: Real>(
    params: &ModelParams<T>,
    features: &Mat<T>,
    modality: Modality,
    input: FusionInput,
) -> Result<Mat<T>> {
    let (ex, im) = match modality {
        Modality::Audio => (&params.f_ex_audio, &params.psi_im_audio),
        Modality::Visual => (&params.g_ex_visual, &params.tau_im_visual),
    };
    if features.cols() != ex.input_dim() {
        return Err(Error::shape(
            "fusion_features",
            format!("{} {} columns", ex.input_dim(), modality.as_str()),
            features.cols(),
        ));
    }
    match input {
        FusionInput::Explicit => ex.forward(features),
        FusionInput::Concat => {
            let (e, i) = rayon::join(|| ex.forward(features), || im.forward(features));
            Ok(e?.hcat(&i?))
        }
    }
}

/// Fits the fusion layer on `[S_ex | S_im]` of the (already normalized) training set.
pub fn fit_fusion<T: Real>(
    params: &ModelParams<T>,
    train_set: &Dataset<T>,
    k_out: usize,
    ridge: T,
) -> Result<FusionTransform<T>> {
    fit_fusion_with(params, train_set, k_out, ridge, FusionInput::Concat)
}

pub fn fit_fusion_with<T: Real>(
    params: &ModelParams<T>,
    train_set: &Dataset<T>,
    k_out: usize,
    ridge: T,
    input: FusionInput,
) -> Result<FusionTransform<T>> {
    let width = match input {
        FusionInput::Concat => 2 * params.k,
        FusionInput::Explicit => params.k,
    };
    if k_out == 0 || k_out > width {
        return Err(Error::InvalidConfig(format!(
            "fusion output dim must be in 1..={width}, got {k_out}"
        )));
    }
    if train_set.len() <= width {
        return Err(Error::DegenerateSample {
            op: "fit_fusion",
            n: train_set.len(),
            min: width + 1,
        });
    }
    let xa = fusion_features(params, &train_set.audio, Modality::Audio, input)?;
    let xv = fusion_features(params, &train_set.visual, Modality::Visual, input)?;
    let sol = cca_solve(&xa, &xv, k_out, ridge)?;
    Ok(FusionTransform {
        input,
        proj_audio: sol.wx,
        proj_visual: sol.wy,
        mean_audio: sol.x_mean,
        mean_visual: sol.y_mean,
        k_out,
        correlations: sol.correlations,
    })
}

impl<T: Real> FusionTransform<T> {
    /// Projects fusion-input rows (already arranged by [`fusion_features`]).
    pub fn project(&self, x: &Mat<T>, modality: Modality) -> Result<Mat<T>> {
        let (w, mean) = match modality {
            Modality::Audio => (&self.proj_audio, &self.mean_audio),
            Modality::Visual => (&self.proj_visual, &self.mean_visual),
        };
        if x.cols() != w.rows() {
            return Err(Error::shape("FusionTransform::project", w.rows(), x.cols()));
        }
        Ok(mul(&x.sub_row_vector(mean), w))
    }
}

/// Final retrieval embedding of raw (normalized) features of one modality.
pub fn embed<T: Real>(
    params: &ModelParams<T>,
    fusion: &FusionTransform<T>,
    features: &Mat<T>,
    modality: Modality,
) -> Result<Mat<T>> {
    let x = fusion_features(params, features, modality, fusion.input)?;
    fusion.project(&x, modality)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthConfig};
    use crate::numerics::cca_solve;

    fn setup() -> (ModelParams<f64>, Dataset<f64>) {
        let data = synth_generate(&SynthConfig {
            classes: 4,
            per_class: 30,
            d_audio: 6,
            d_visual: 9,
            seed: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        let p = ModelParams::init(5, 6, 9, 4, &[16], &[16, 12]).unwrap();
        (p, data)
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn dims_and_self_consistency() {
        let (p, d) = setup();
        let f = fit_fusion(&p, &d, 4, 0.0).unwrap();
        assert_eq!(f.proj_audio.shape(), (8, 4));
        assert!(f.correlations.windows(2).all(|w| w[0] >= w[1]));
        assert!(f.correlations.iter().all(|&c| (0.0..=1.0).contains(&c)));

        let xa = fusion_features(&p, &d.audio, Modality::Audio, FusionInput::Concat).unwrap();
        let xv = fusion_features(&p, &d.visual, Modality::Visual, FusionInput::Concat).unwrap();
        let oracle = cca_solve(&xa, &xv, 4, 0.0).unwrap();
        for (a, b) in f.correlations.iter().zip(&oracle.correlations) {
            assert!((a - b).abs() < 1e-8);
        }

        let ea = embed(&p, &f, &d.audio, Modality::Audio).unwrap();
        let ev = embed(&p, &f, &d.visual, Modality::Visual).unwrap();
        for j in 0..4 {
            assert!((pearson(&ea.column(j), &ev.column(j)) - f.correlations[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_implicit_outputs_leave_correlations_unchanged() {
        let (mut p, d) = setup();
        for b in [&mut p.psi_im_audio, &mut p.tau_im_visual] {
            let last = b.num_layers() - 1;
            b.weights[last] = Mat::zeros(b.weights[last].rows(), b.weights[last].cols());
        }
        let ridge = 1e-4;
        let full = fit_fusion(&p, &d, 4, ridge).unwrap();
        let ex = fit_fusion_with(&p, &d, 4, ridge, FusionInput::Explicit).unwrap();
        for (a, b) in full.correlations.iter().zip(&ex.correlations) {
            assert!((a - b).abs() < 1e-8, "{a} {b}");
        }
    }

    #[test]
    fn embed_is_row_independent_and_affine() {
        let (p, d) = setup();
        let f = fit_fusion(&p, &d, 3, 1e-4).unwrap();
        let all = embed(&p, &f, &d.visual, Modality::Visual).unwrap();
        let one = embed(&p, &f, &d.visual.select_rows(&[17]), Modality::Visual).unwrap();
        assert!(one.max_abs_diff(&all.select_rows(&[17])) < 1e-12);

        let x = fusion_features(&p, &d.audio, Modality::Audio, FusionInput::Concat).unwrap();
        let (u, v) = (x.select_rows(&[0]), x.select_rows(&[1]));
        let lhs = f
            .project(&u.scale(2.0).add(&v.scale(-0.5)), Modality::Audio)
            .unwrap();
        let pu = f.project(&u, Modality::Audio).unwrap();
        let pv = f.project(&v, Modality::Audio).unwrap();
        let p0 = f.project(&Mat::zeros(1, 8), Modality::Audio).unwrap();
        // affine: P(2u - v/2) = 2 P(u) - P(v)/2 + (1 - 2 + 1/2) P(0)
        let rhs = pu.scale(2.0).add(&pv.scale(-0.5)).add(&p0.scale(-0.5));
        assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn validation_and_serde() {
        let (p, d) = setup();
        assert!(fit_fusion(&p, &d, 9, 1e-4).is_err());
        assert!(embed(
            &p,
            &fit_fusion(&p, &d, 2, 1e-4).unwrap(),
            &d.audio,
            Modality::Visual
        )
        .is_err());
        let f = fit_fusion(&p, &d, 2, 1e-4).unwrap();
        let json = serde_json::to_string(&f).unwrap();
        let back: FusionTransform<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, f);
    }
}
