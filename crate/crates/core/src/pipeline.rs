//! End-to-end model: normalizer, trained branches and the ablation-specific
//! retrieval head.

use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::dataset::{Dataset, Modality};
use crate::error::{Error, Result};
use crate::fusion::{embed as fusion_embed, fit_fusion_with, FusionInput, FusionTransform};
use crate::io::{read, write_json};
use crate::losses::{orthogonality, Orthogonality};
use crate::network::{ModelParams, SubspaceOutputs};
use crate::numerics::Mat;
use crate::preprocess::Normalizer;
use crate::retrieval::{evaluate, EvalReport};
use crate::scalar::Real;
use crate::trainer::{train, Ablation, LossHistory, TrainConfig};

/// File name of the fusion transform, stored next to the checkpoint.
pub const FUSION_FILE: &str = "fusion.json";

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub params: ModelParams<T>,
    pub normalizer: Option<Normalizer>,
    /// `None` only for [`Ablation::Implicit`], which ranks on the raw implicit outputs.
    pub fusion: Option<FusionTransform<T>>,
    pub config: TrainConfig,
}

/// Trains the branches, then fits the retrieval head on the training split.
pub fn fit_model<T: Real>(
    config: &TrainConfig,
    train_set: &Dataset<T>,
) -> Result<(Model<T>, LossHistory)> {
    let trained = train(config, train_set)?;
    let normalized = match &trained.normalizer {
        Some(n) => n.apply(train_set)?,
        None => train_set.clone(),
    };
    let k = trained.params.k;
    let ridge = T::lit(config.ridge);
    let fusion = match config.ablation {
        Ablation::Full => Some(fit_fusion_with(
            &trained.params,
            &normalized,
            config.fusion_dim.unwrap_or(k),
            ridge,
            FusionInput::Concat,
        )?),
        Ablation::Explicit => Some(fit_fusion_with(
            &trained.params,
            &normalized,
            config.fusion_dim.unwrap_or(k),
            ridge,
            FusionInput::Explicit,
        )?),
        Ablation::Implicit => None,
    };
    let model = Model {
        params: trained.params,
        normalizer: trained.normalizer,
        fusion,
        config: config.clone(),
    };
    Ok((model, trained.history))
}

impl<T: Real> Model<T> {
    pub fn normalize(&self, data: &Dataset<T>) -> Result<Dataset<T>> {
        match &self.normalizer {
            Some(n) => n.apply(data),
            None => Ok(data.clone()),
        }
    }

    /// Retrieval embedding of raw features of one modality.
    pub fn embed(&self, features: &Mat<T>, modality: Modality) -> Result<Mat<T>> {
        let x = match &self.normalizer {
            Some(n) => n.transform(features, modality)?,
            None => features.clone(),
        };
        match (&self.fusion, self.config.ablation) {
            (Some(f), _) => fusion_embed(&self.params, f, &x, modality),
            (None, Ablation::Implicit) => match modality {
                Modality::Audio => self.params.psi_im_audio.forward(&x),
                Modality::Visual => self.params.tau_im_visual.forward(&x),
            },
            (None, a) => Err(Error::InvalidConfig(format!(
                "model trained with ablation {} has no fusion transform",
                a.as_str()
            ))),
        }
    }

    /// Cross-modal retrieval report on `test` (features un-normalized).
    pub fn evaluate(&self, test: &Dataset<T>, scopes: &[usize]) -> Result<EvalReport> {
        let (a, v) = rayon::join(
            || self.embed(&test.audio, Modality::Audio),
            || self.embed(&test.visual, Modality::Visual),
        );
        evaluate(&a?, &v?, &test.labels, test.num_classes, scopes)
    }

    /// Raw branch outputs on `data` (features un-normalized).
    pub fn subspace_outputs(&self, data: &Dataset<T>) -> Result<SubspaceOutputs<T>> {
        let d = self.normalize(data)?;
        Ok(self.params.forward_cached(&d.audio, &d.visual)?.outputs())
    }

    /// Normalized cross-subspace Frobenius products on `data`.
    pub fn orthogonality(&self, data: &Dataset<T>) -> Result<Orthogonality> {
        orthogonality(&self.subspace_outputs(data)?)
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            params: self.params.clone(),
            normalizer: self.normalizer.clone(),
            config: self.config.clone(),
        }
    }

    /// Writes the checkpoint and, if present, `fusion.json` in the same directory.
    pub fn save(&self, checkpoint_path: &Path) -> Result<()> {
        self.checkpoint().save(checkpoint_path)?;
        if let Some(f) = &self.fusion {
            write_json(&fusion_path(checkpoint_path), f)?;
        }
        Ok(())
    }

    pub fn load(checkpoint_path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::<T>::load(checkpoint_path)?;
        let fusion = match ckpt.config.ablation {
            Ablation::Implicit => None,
            _ => {
                let path = fusion_path(checkpoint_path);
                let bytes = read(&path)?;
                let f: FusionTransform<T> =
                    serde_json::from_slice(&bytes).map_err(|e| Error::Format {
                        what: "fusion transform",
                        detail: format!("{}: {e}", path.display()),
                    })?;
                let width = match f.input {
                    FusionInput::Concat => 2 * ckpt.params.k,
                    FusionInput::Explicit => ckpt.params.k,
                };
                if f.proj_audio.rows() != width
                    || f.proj_visual.rows() != width
                    || f.mean_audio.len() != width
                    || f.mean_visual.len() != width
                {
                    return Err(Error::shape(
                        "Model::load fusion",
                        format!("{width} input rows"),
                        f.proj_audio.rows(),
                    ));
                }
                Some(f)
            }
        };
        Ok(Self {
            params: ckpt.params,
            normalizer: ckpt.normalizer,
            fusion,
            config: ckpt.config,
        })
    }
}

pub fn fusion_path(checkpoint_path: &Path) -> PathBuf {
    checkpoint_path.with_file_name(FUSION_FILE)
}
