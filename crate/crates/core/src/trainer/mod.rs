//! Minibatch momentum SGD on the composite objective.

mod gradcheck;

pub use gradcheck::{
    grad_check, grad_check_default, GradCheckOptions, GradCheckReport, TensorCheck, TermErrors,
};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{one_hot_matrix, Dataset};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::losses::{weighted_loss, LossBreakdown, LossWeights, DEFAULT_ALPHA, DEFAULT_BETA};
use crate::network::{ModelParams, DEFAULT_AUDIO_HIDDEN, DEFAULT_VISUAL_HIDDEN};
use crate::numerics::DEFAULT_RIDGE;
use crate::preprocess::Normalizer;
use crate::scalar::Real;

/// Which terms are trained and which outputs are used for retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// Composite objective; retrieval on the fused explicit and implicit outputs.
    #[default]
    Full,
    /// Correlation term only; retrieval on the explicit outputs through the CCA layer.
    Explicit,
    /// Discriminative term only (unit weight); retrieval on the raw implicit outputs.
    Implicit,
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::Explicit => "explicit",
            Ablation::Implicit => "implicit",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "explicit" => Ok(Ablation::Explicit),
            "implicit" => Ok(Ablation::Implicit),
            other => Err(Error::InvalidConfig(format!("unknown ablation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub alpha: f64,
    pub beta: f64,
    pub ridge: f64,
    pub seed: u64,
    pub share_ex_im: bool,
    pub normalize_inputs: bool,
    pub ablation: Ablation,
    pub audio_hidden: Vec<usize>,
    pub visual_hidden: Vec<usize>,
    /// Output dimension of the fusion layer; `None` means `k`.
    pub fusion_dim: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 400,
            learning_rate: 1e-3,
            momentum: 0.9,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            ridge: DEFAULT_RIDGE,
            seed: 0,
            share_ex_im: false,
            normalize_inputs: true,
            ablation: Ablation::Full,
            audio_hidden: DEFAULT_AUDIO_HIDDEN.to_vec(),
            visual_hidden: DEFAULT_VISUAL_HIDDEN.to_vec(),
            fusion_dim: None,
        }
    }
}

impl TrainConfig {
    /// Checks every field that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("ridge", self.ridge),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.audio_hidden.contains(&0) || self.visual_hidden.contains(&0) {
            return bad("hidden widths must be at least 1".into());
        }
        if self.fusion_dim == Some(0) {
            return bad("fusion_dim must be at least 1".into());
        }
        Ok(())
    }

    /// Checks the data-dependent constraints: `batch_size > k`, enough samples.
    pub fn validate_for(&self, n: usize, k: usize) -> Result<()> {
        self.validate()?;
        if k < 2 {
            return Err(Error::InvalidConfig(format!(
                "training needs at least 2 classes, got {k}"
            )));
        }
        if self.batch_size <= k {
            return Err(Error::BatchTooSmall {
                batch: self.batch_size,
                k,
            });
        }
        if n < self.batch_size {
            return Err(Error::DatasetTooSmall {
                n,
                batch_size: self.batch_size,
            });
        }
        if let Some(d) = self.fusion_dim {
            let max = match self.ablation {
                Ablation::Full => 2 * k,
                _ => k,
            };
            if d > max {
                return Err(Error::InvalidConfig(format!(
                    "fusion_dim {d} exceeds {max}"
                )));
            }
        }
        Ok(())
    }

    /// Term weights implied by the ablation.
    pub fn loss_weights(&self) -> LossWeights {
        match self.ablation {
            Ablation::Full => LossWeights {
                corr: 1.0,
                alpha: self.alpha,
                beta: self.beta,
            },
            Ablation::Explicit => LossWeights {
                corr: 1.0,
                alpha: 0.0,
                beta: 0.0,
            },
            Ablation::Implicit => LossWeights {
                corr: 0.0,
                alpha: 1.0,
                beta: 0.0,
            },
        }
    }
}

/// Per-epoch mean of the batch loss breakdowns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub epochs: Vec<LossBreakdown>,
}

impl LossHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|b| b.total).collect()
    }

    /// `epoch,corr,dis,cons,total`, epochs numbered from 1.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,corr,dis,cons,total\n");
        for (i, b) in self.epochs.iter().enumerate() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                i + 1,
                b.corr,
                b.dis,
                b.cons,
                b.total
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Result of [`train`]: weights, loss history and the input normalizer (if enabled).
#[derive(Debug, Clone)]
pub struct Trained<T> {
    pub params: ModelParams<T>,
    pub history: LossHistory,
    pub normalizer: Option<Normalizer>,
}

/// Trains all four branches with momentum SGD (`v = mu v - lr g; w += v`).
///
/// Every epoch reshuffles the rows with a generator seeded from `config.seed`;
/// a trailing batch with at most `k` rows is dropped. The run is a pure
/// function of `(config, train_set)`.
pub fn train<T: Real>(config: &TrainConfig, train_set: &Dataset<T>) -> Result<Trained<T>> {
    let k = train_set.num_classes;
    config.validate_for(train_set.len(), k)?;
    let normalizer = if config.normalize_inputs {
        Some(Normalizer::fit(train_set)?)
    } else {
        None
    };
    let data = match &normalizer {
        Some(nm) => nm.apply(train_set)?,
        None => train_set.clone(),
    };
    let mut params = ModelParams::init(
        config.seed,
        data.d_audio(),
        data.d_visual(),
        k,
        &config.audio_hidden,
        &config.visual_hidden,
    )?;
    if config.share_ex_im {
        params = params.tie_hidden_layers();
    }
    let history = run_epochs(config, &data, &mut params)?;
    Ok(Trained {
        params,
        history,
        normalizer,
    })
}

/// Runs `config.epochs` epochs on already-normalized data, updating `params` in place.
pub fn run_epochs<T: Real>(
    config: &TrainConfig,
    data: &Dataset<T>,
    params: &mut ModelParams<T>,
) -> Result<LossHistory> {
    let k = params.k;
    let n = data.len();
    let weights = config.loss_weights();
    let ridge = T::lit(config.ridge);
    let lr = T::lit(config.learning_rate);
    let mu = T::lit(config.momentum);
    let mut velocity = params.zeros_like();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut history = LossHistory::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut corr, mut dis, mut cons, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            if idx.len() <= k {
                continue;
            }
            let audio = data.audio.select_rows(idx);
            let visual = data.visual.select_rows(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let y = one_hot_matrix(&labels, k);
            let cache = params.forward_cached(&audio, &visual)?;
            let out = cache.outputs();
            let (lb, upstream) = weighted_loss(&out, &y, weights, ridge)?;
            if !lb.is_finite() || !upstream.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: bi + 1,
                });
            }
            let grads = params.backward(&audio, &visual, &cache, &upstream)?;
            for ((w, v), g) in params
                .tensors_mut()
                .into_iter()
                .zip(velocity.tensors_mut())
                .zip(grads.tensors())
            {
                for ((w, v), &g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
                    *v = mu * *v - lr * g;
                    *w += *v;
                }
            }
            corr += lb.corr;
            dis += lb.dis;
            cons += lb.cons;
            batches += 1;
        }
        let m = batches as f64;
        let epoch_loss =
            LossBreakdown::new(corr / m, dis / m, cons / m, weights.alpha, weights.beta);
        if epoch == 0 || (epoch + 1) % 100 == 0 {
            log::info!(
                "epoch {}: total {:.6} (corr {:.6}, dis {:.6}, cons {:.6})",
                epoch + 1,
                epoch_loss.total,
                epoch_loss.corr,
                epoch_loss.dis,
                epoch_loss.cons
            );
        }
        history.epochs.push(epoch_loss);
    }
    if !params.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: config.epochs,
            batch: 0,
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthConfig};

    fn tiny() -> (TrainConfig, Dataset<f64>) {
        let data = synth_generate(&SynthConfig {
            classes: 3,
            per_class: 20,
            d_audio: 6,
            d_visual: 8,
            seed: 1,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 25,
            learning_rate: 1e-2,
            audio_hidden: vec![8],
            visual_hidden: vec![8, 6],
            seed: 4,
            ..TrainConfig::default()
        };
        (cfg, data)
    }

    #[test]
    fn deterministic_with_consistent_history() {
        let (cfg, data) = tiny();
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 5);
        for lb in &a.history.epochs {
            assert!((lb.total - (lb.corr + lb.alpha * lb.dis + lb.beta * lb.cons)).abs() < 1e-12);
        }
        let csv = a.history.to_csv();
        assert!(csv.starts_with("epoch,corr,dis,cons,total\n1,"));
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn vanishing_learning_rate_leaves_params_unchanged() {
        let (mut cfg, data) = tiny();
        cfg.epochs = 1;
        cfg.learning_rate = 1e-30;
        let out = train(&cfg, &data).unwrap();
        let init =
            ModelParams::<f64>::init(cfg.seed, 6, 8, 3, &cfg.audio_hidden, &cfg.visual_hidden)
                .unwrap();
        for (a, b) in out.params.tensors().into_iter().zip(init.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-25);
            }
        }
    }

    #[test]
    fn explicit_ablation_freezes_implicit_branches() {
        let (mut cfg, data) = tiny();
        cfg.ablation = Ablation::Explicit;
        let out = train(&cfg, &data).unwrap();
        let init =
            ModelParams::<f64>::init(cfg.seed, 6, 8, 3, &cfg.audio_hidden, &cfg.visual_hidden)
                .unwrap();
        assert_eq!(out.params.psi_im_audio, init.psi_im_audio);
        assert_eq!(out.params.tau_im_visual, init.tau_im_visual);
        assert_ne!(out.params.f_ex_audio, init.f_ex_audio);

        cfg.ablation = Ablation::Full;
        cfg.alpha = 0.0;
        cfg.beta = 0.0;
        let out = train(&cfg, &data).unwrap();
        assert_eq!(out.params.psi_im_audio, init.psi_im_audio);
    }

    #[test]
    fn shared_hidden_layers_stay_tied() {
        let (mut cfg, data) = tiny();
        cfg.share_ex_im = true;
        let out = train(&cfg, &data).unwrap();
        assert_eq!(
            out.params.f_ex_audio.weights[0],
            out.params.psi_im_audio.weights[0]
        );
        assert_eq!(
            out.params.g_ex_visual.weights[1],
            out.params.tau_im_visual.weights[1]
        );
        assert_ne!(
            out.params.g_ex_visual.weights[2],
            out.params.tau_im_visual.weights[2]
        );
    }

    #[test]
    fn config_validation() {
        let (cfg, data) = tiny();
        let bad = TrainConfig {
            batch_size: 3,
            ..cfg.clone()
        };
        assert!(matches!(
            train(&bad, &data),
            Err(Error::BatchTooSmall { .. })
        ));
        let bad = TrainConfig {
            batch_size: 100,
            ..cfg.clone()
        };
        assert!(matches!(
            train(&bad, &data),
            Err(Error::DatasetTooSmall { .. })
        ));
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..cfg.clone()
        };
        assert!(matches!(train(&bad, &data), Err(Error::InvalidConfig(_))));
        let json = r#"{"epochs": 3, "unknown": 1}"#;
        assert!(serde_json::from_str::<TrainConfig>(json).is_err());
        let parsed: TrainConfig =
            serde_json::from_str(r#"{"epochs": 3, "ablation": "implicit"}"#).unwrap();
        assert_eq!(parsed.ablation, Ablation::Implicit);
        assert_eq!(parsed.batch_size, 400);
    }
}
