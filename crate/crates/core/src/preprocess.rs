//! Per-feature z-scoring fitted on the training split.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Modality};
use crate::error::{Error, Result};
use crate::numerics::Mat;
use crate::scalar::Real;

/// Feature-wise affine map `x -> (x - mean) * scale`.
///
/// `scale` is the reciprocal sample standard deviation, or 1 for constant features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub audio_mean: Vec<f64>,
    pub audio_scale: Vec<f64>,
    pub visual_mean: Vec<f64>,
    pub visual_scale: Vec<f64>,
}

impl Normalizer {
    pub fn fit<T: Real>(train: &Dataset<T>) -> Result<Self> {
        if train.len() < 2 {
            return Err(Error::DegenerateSample {
                op: "Normalizer::fit",
                n: train.len(),
                min: 2,
            });
        }
        let (audio_mean, audio_scale) = moments(&train.audio);
        let (visual_mean, visual_scale) = moments(&train.visual);
        Ok(Self {
            audio_mean,
            audio_scale,
            visual_mean,
            visual_scale,
        })
    }

    pub fn transform<T: Real>(&self, x: &Mat<T>, modality: Modality) -> Result<Mat<T>> {
        let (mean, scale) = match modality {
            Modality::Audio => (&self.audio_mean, &self.audio_scale),
            Modality::Visual => (&self.visual_mean, &self.visual_scale),
        };
        if x.cols() != mean.len() {
            return Err(Error::shape(
                "Normalizer::transform",
                format!("{} {} columns", mean.len(), modality.as_str()),
                x.cols(),
            ));
        }
        let mean: Vec<T> = mean.iter().map(|&v| T::lit(v)).collect();
        let scale: Vec<T> = scale.iter().map(|&v| T::lit(v)).collect();
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, &m), &s) in out.row_mut(r).iter_mut().zip(&mean).zip(&scale) {
                *v = (*v - m) * s;
            }
        }
        Ok(out)
    }

    pub fn apply<T: Real>(&self, d: &Dataset<T>) -> Result<Dataset<T>> {
        let mut out = d.clone();
        out.audio = self.transform(&d.audio, Modality::Audio)?;
        out.visual = self.transform(&d.visual, Modality::Visual)?;
        Ok(out)
    }
}

fn moments<T: Real>(x: &Mat<T>) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    let mut mean = vec![0.0; x.cols()];
    for row in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v.to_f64().unwrap();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; x.cols()];
    for row in x.iter_rows() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v.to_f64().unwrap() - m;
            *s += d * d;
        }
    }
    let scale = var
        .iter()
        .map(|&s| {
            let sd = (s / (n - 1.0)).sqrt();
            if sd > 1e-12 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tests::gaussian;

    #[test]
    fn train_statistics_are_standardized() {
        let audio = gaussian(50, 3, 1).map(|v| 4.0 * v + 10.0);
        let mut visual = gaussian(50, 2, 2);
        for r in 0..50 {
            visual.set(r, 1, 7.0);
        }
        let d = Dataset::new(audio, visual, vec![0; 50], 1).unwrap();
        let norm = Normalizer::fit(&d).unwrap();
        let z = norm.apply(&d).unwrap();
        let cov = crate::numerics::covariance(&z.audio, &z.audio, true).unwrap();
        for j in 0..3 {
            assert!(z.audio.column_means()[j].abs() < 1e-12);
            assert!((cov.get(j, j) - 1.0).abs() < 1e-12);
        }
        assert!(z.visual.column(1).iter().all(|&v| v == 0.0));
        assert!(norm
            .transform(&Mat::<f64>::zeros(2, 5), Modality::Audio)
            .is_err());
    }
}
