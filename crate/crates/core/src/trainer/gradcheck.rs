//! Central finite-difference check of the analytic parameter gradients.
//!
//! A perturbed forward pass reuses the cached activations and only redoes the
//! work downstream of the perturbed unit, which keeps full-width nets cheap.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{one_hot_matrix, synth_generate, SynthConfig};
use crate::error::{Error, Result};
use crate::losses::{weighted_loss, LossWeights, DEFAULT_ALPHA, DEFAULT_BETA};
use crate::network::{
    Branch, ModelCache, ModelGrads, ModelParams, DEFAULT_AUDIO_HIDDEN, DEFAULT_VISUAL_HIDDEN,
};
use crate::numerics::{Mat, DEFAULT_RIDGE};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Parameters compared per tensor (all of them for smaller tensors).
    pub samples_per_tensor: usize,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub ridge: f64,
    /// Lower bound on the relative-error denominator. Below it the difference
    /// quotient is dominated by roundoff (about `1e-16 / epsilon`).
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            samples_per_tensor: 200,
            seed: 0,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            ridge: DEFAULT_RIDGE,
            floor: 1e-6,
        }
    }
}

/// Worst relative error for each loss term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TermErrors {
    pub corr: f64,
    pub dis: f64,
    pub cons: f64,
    pub total: f64,
}

impl TermErrors {
    pub fn max(&self) -> f64 {
        self.corr.max(self.dis).max(self.cons).max(self.total)
    }

    fn merge(&mut self, o: &TermErrors) {
        self.corr = self.corr.max(o.corr);
        self.dis = self.dis.max(o.dis);
        self.cons = self.cons.max(o.cons);
        self.total = self.total.max(o.total);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub size: usize,
    pub checked: usize,
    /// Candidates rejected because the perturbation moved a hidden unit across the rectifier kink.
    pub skipped: usize,
    pub errors: TermErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub max_relative_error: f64,
    pub terms: TermErrors,
    pub tensors: Vec<TensorCheck>,
}

const TERMS: usize = 4;

/// Compares analytic gradients of the correlation, discriminative,
/// orthogonality and total losses against central differences.
///
/// The check treats the four branches as independent parameter sets; tied
/// hidden layers are covered because their gradient is the sum of the two
/// independent ones.
pub fn grad_check<T: Real>(
    params: &ModelParams<T>,
    audio: &Mat<T>,
    visual: &Mat<T>,
    labels: &[usize],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(opts.epsilon.is_finite() && opts.epsilon > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "epsilon must be > 0, got {}",
            opts.epsilon
        )));
    }
    let k = params.k;
    if labels.len() != audio.rows() {
        return Err(Error::shape("grad_check", audio.rows(), labels.len()));
    }
    if audio.rows() <= k {
        return Err(Error::BatchTooSmall {
            batch: audio.rows(),
            k,
        });
    }
    let mut untied = params.clone();
    untied.share_ex_im = false;
    let params = &untied;

    let y = one_hot_matrix(&labels.iter().map(|&l| l.min(k - 1)).collect::<Vec<_>>(), k);
    let ridge = T::lit(opts.ridge);
    let term_weights = [
        LossWeights {
            corr: 1.0,
            alpha: 0.0,
            beta: 0.0,
        },
        LossWeights {
            corr: 0.0,
            alpha: 1.0,
            beta: 0.0,
        },
        LossWeights {
            corr: 0.0,
            alpha: 0.0,
            beta: 1.0,
        },
        LossWeights {
            corr: 1.0,
            alpha: opts.alpha,
            beta: opts.beta,
        },
    ];
    let cache = params.forward_cached(audio, visual)?;
    let base = cache.outputs();
    let analytic: Vec<ModelGrads<T>> = term_weights
        .iter()
        .map(|&w| {
            let (_, up) = weighted_loss(&base, &y, w, ridge)?;
            params.backward(audio, visual, &cache, &up)
        })
        .collect::<Result<_>>()?;

    let values = |out: &crate::network::SubspaceOutputs<T>| -> Result<[f64; TERMS]> {
        let (lb, _) = weighted_loss(out, &y, term_weights[3], ridge)?;
        Ok([lb.corr, lb.dis, lb.cons, lb.total])
    };

    let mut jobs = Vec::new();
    for (bi, &branch) in Branch::ALL.iter().enumerate() {
        for t in 0..params.branch(branch).tensors().len() {
            jobs.push((bi, branch, t));
        }
    }
    let tensors: Vec<TensorCheck> = jobs
        .into_par_iter()
        .map(|(bi, branch, t)| {
            check_tensor(
                params, audio, visual, &cache, &analytic, &values, branch, t, opts, bi,
            )
        })
        .collect::<Result<_>>()?;

    let mut terms = TermErrors::default();
    for tc in &tensors {
        terms.merge(&tc.errors);
    }
    Ok(GradCheckReport {
        epsilon: opts.epsilon,
        max_relative_error: terms.max(),
        terms,
        tensors,
    })
}

#[allow(clippy::too_many_arguments)]
fn check_tensor<T: Real>(
    params: &ModelParams<T>,
    audio: &Mat<T>,
    visual: &Mat<T>,
    cache: &ModelCache<T>,
    analytic: &[ModelGrads<T>],
    values: &(dyn Fn(&crate::network::SubspaceOutputs<T>) -> Result<[f64; TERMS]> + Sync),
    branch: Branch,
    tensor: usize,
    opts: &GradCheckOptions,
    branch_index: usize,
) -> Result<TensorCheck> {
    let net = params.branch(branch);
    let size = net.tensors()[tensor].len();
    let target = opts.samples_per_tensor.min(size);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream((branch_index * 64 + tensor) as u64 + 1);
    let candidates = index::sample(&mut rng, size, (4 * target).min(size));

    let input = if branch.is_audio() { audio } else { visual };
    let bcache = cache.get(branch);
    let eps = T::lit(opts.epsilon);
    let two_eps = 2.0 * opts.epsilon;
    let mut base = cache.outputs();
    let mut errors = TermErrors::default();
    let (mut checked, mut skipped) = (0, 0);
    for i in candidates.iter() {
        if checked == target {
            break;
        }
        let p = net.param_ref(tensor, i);
        let (plus, crossed_p) = net.perturbed_output(input, bcache, p, eps);
        let (minus, crossed_m) = net.perturbed_output(input, bcache, p, -eps);
        if crossed_p || crossed_m {
            skipped += 1;
            continue;
        }
        *base.get_mut(branch) = plus;
        let up = values(&base)?;
        *base.get_mut(branch) = minus;
        let down = values(&base)?;
        let mut e = [0.0; TERMS];
        for term in 0..TERMS {
            let numeric = (up[term] - down[term]) / two_eps;
            let a = analytic[term].branch(branch).tensors()[tensor][i]
                .to_f64()
                .unwrap();
            e[term] = relative_error(a, numeric, opts.floor);
        }
        errors.merge(&TermErrors {
            corr: e[0],
            dis: e[1],
            cons: e[2],
            total: e[3],
        });
        checked += 1;
    }
    *base.get_mut(branch) = bcache.output.clone();
    let kind = if tensor.is_multiple_of(2) {
        "weight"
    } else {
        "bias"
    };
    Ok(TensorCheck {
        name: format!("{}.layer{}.{kind}", branch.name(), tensor / 2),
        size,
        checked,
        skipped,
        errors,
    })
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    let d = (a - n).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / a.abs().max(n.abs()).max(floor)
}

/// Check on freshly initialized default-width nets (128/1024-D inputs, 10
/// classes) with a synthetic batch of 40.
pub fn grad_check_default(seed: u64, epsilon: f64) -> Result<GradCheckReport> {
    let data = synth_generate::<f64>(&SynthConfig {
        classes: 10,
        per_class: 4,
        seed,
        ..SynthConfig::default()
    })?;
    let params = ModelParams::init(
        seed,
        128,
        1024,
        10,
        &DEFAULT_AUDIO_HIDDEN,
        &DEFAULT_VISUAL_HIDDEN,
    )?;
    let opts = GradCheckOptions {
        epsilon,
        seed,
        ..GradCheckOptions::default()
    };
    grad_check(&params, &data.audio, &data.visual, &data.labels, &opts)
}
