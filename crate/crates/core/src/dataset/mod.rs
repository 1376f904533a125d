//! Paired audio/visual feature matrices with category labels.

mod format;
mod synth;

pub use format::{
    load_dataset, load_embeddings, save_dataset, save_embeddings, EmbeddingFile, EmbeddingManifest,
    Manifest, FORMAT_VERSION,
};
pub use synth::{synth_generate, SynthConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Mat;
use crate::scalar::Real;

/// Which side of a paired sample a feature matrix belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Visual,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Visual => "visual",
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "audio" | "a" => Ok(Modality::Audio),
            "visual" | "v" => Ok(Modality::Visual),
            other => Err(Error::InvalidConfig(format!("unknown modality {other:?}"))),
        }
    }
}

/// Train/test row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub(crate) fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.test) {
            if i >= n {
                return Err(Error::Format {
                    what: "split",
                    detail: format!("index {i} out of range for {n} samples"),
                });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Format {
                    what: "split",
                    detail: format!("index {i} appears more than once"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub audio: Mat<T>,
    pub visual: Mat<T>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub names: Option<Vec<String>>,
    pub split: Option<Split>,
}

impl<T: Real> Dataset<T> {
    pub fn new(
        audio: Mat<T>,
        visual: Mat<T>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::EmptyInput("Dataset::new"));
        }
        if audio.rows() != n || visual.rows() != n {
            return Err(Error::shape(
                "Dataset::new",
                format!("{n} rows in both modalities"),
                format!("audio {}, visual {}", audio.rows(), visual.rows()),
            ));
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                row,
                label,
                classes: num_classes,
            });
        }
        Ok(Self {
            audio,
            visual,
            labels,
            num_classes,
            names: None,
            split: None,
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_classes {
            return Err(Error::shape(
                "Dataset::with_names",
                self.num_classes,
                names.len(),
            ));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn with_split(mut self, split: Split) -> Result<Self> {
        split.validate(self.len())?;
        self.split = Some(split);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn d_audio(&self) -> usize {
        self.audio.cols()
    }

    pub fn d_visual(&self) -> usize {
        self.visual.cols()
    }

    pub fn features(&self, modality: Modality) -> &Mat<T> {
        match modality {
            Modality::Audio => &self.audio,
            Modality::Visual => &self.visual,
        }
    }

    /// Rows `idx` as a new dataset (split metadata dropped).
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            audio: self.audio.select_rows(idx),
            visual: self.visual.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            names: self.names.clone(),
            split: None,
        }
    }

    /// `n x c` one-hot label matrix.
    pub fn one_hot_labels(&self) -> Mat<T> {
        one_hot_matrix(&self.labels, self.num_classes)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Materializes the stored split.
    pub fn train_test(&self) -> Result<(Self, Self)> {
        let split = self
            .split
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("dataset has no train/test split".into()))?;
        Ok((self.subset(&split.train), self.subset(&split.test)))
    }

    pub fn cast<U: Real>(&self) -> Dataset<U> {
        Dataset {
            audio: self.audio.cast(),
            visual: self.visual.cast(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            names: self.names.clone(),
            split: self.split.clone(),
        }
    }
}

/// Collapses `l` frame-level feature rows into one global vector by
/// averaging over the frame axis.
///
/// Column sums are carried in double-double precision and the quotient is
/// rounded once, so stacking copies of the same frames leaves the result
/// bit-identical.
pub fn pool_frames<T: Real>(frames: &Mat<T>) -> Result<Vec<T>> {
    if frames.rows() == 0 {
        return Err(Error::EmptyInput("pool_frames"));
    }
    let mut acc = vec![(0.0f64, 0.0f64); frames.cols()];
    for row in frames.iter_rows() {
        for ((hi, lo), v) in acc.iter_mut().zip(row) {
            let (s, e) = two_sum(*hi, v.to_f64().unwrap());
            *hi = s;
            *lo += e;
        }
    }
    let l = frames.rows() as f64;
    Ok(acc
        .into_iter()
        .map(|(hi, lo)| {
            let (hi, lo) = two_sum(hi, lo);
            let q = hi / l;
            let r = (-q).mul_add(l, hi) + lo;
            T::from_f64(q + r / l).unwrap()
        })
        .collect())
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

pub fn one_hot<T: Real>(label: usize, num_classes: usize) -> Result<Vec<T>> {
    if label >= num_classes {
        return Err(Error::LabelOutOfRange {
            row: 0,
            label,
            classes: num_classes,
        });
    }
    let mut v = vec![T::zero(); num_classes];
    v[label] = T::one();
    Ok(v)
}

pub(crate) fn one_hot_matrix<T: Real>(labels: &[usize], num_classes: usize) -> Mat<T> {
    let mut m = Mat::zeros(labels.len(), num_classes);
    for (i, &l) in labels.iter().enumerate() {
        m.set(i, l, T::one());
    }
    m
}

/// Category-stratified split: each category contributes
/// `round(train_frac * size)` training rows (kept within `[1, size - 1]`).
pub fn stratified_split(
    labels: &[usize],
    num_classes: usize,
    train_frac: f64,
    seed: u64,
) -> Result<Split> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train_frac must be in (0, 1), got {train_frac}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::LabelOutOfRange {
                row: i,
                label: l,
                classes: num_classes,
            });
        }
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (category, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::UnsplittableCategory {
                category,
                count: members.len(),
            });
        }
        let size = members.len();
        let n_train = ((train_frac * size as f64).round() as usize).clamp(1, size - 1);
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// Stratified train/test partition of `dataset`.
pub fn split<T: Real>(
    dataset: &Dataset<T>,
    train_frac: f64,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>)> {
    let s = stratified_split(&dataset.labels, dataset.num_classes, train_frac, seed)?;
    Ok((dataset.subset(&s.train), dataset.subset(&s.test)))
}
