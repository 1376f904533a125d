//! Shared-latent synthetic audio/visual data.
//!
//! Each class owns a centroid `mu_c ~ N(0, I_L)` in an `L = c` dimensional
//! latent space. A sample draws `z = mu_c + cross_noise * eps` once and maps it
//! through two fixed maps, `a = z P_a + noise * eta_a` and
//! `v = z P_v + noise * eta_v`, with map entries `N(0, 1/L)` so every feature
//! has unit signal variance per unit latent variance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{mul, Mat};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub d_audio: usize,
    pub d_visual: usize,
    pub noise: f64,
    pub cross_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 100,
            d_audio: 128,
            d_visual: 1024,
            noise: 0.5,
            cross_noise: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("classes", self.classes),
            ("per_class", self.per_class),
            ("d_audio", self.d_audio),
            ("d_visual", self.d_visual),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        for (name, v) in [("noise", self.noise), ("cross_noise", self.cross_noise)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Draws `classes * per_class` samples, class-major. Generated in `f64` then cast.
pub fn synth_generate<T: Real>(cfg: &SynthConfig) -> Result<Dataset<T>> {
    cfg.validate()?;
    let latent = cfg.classes;
    let n = cfg.classes * cfg.per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };

    // Unit signal variance per feature: each output sums `latent` terms of variance 1/latent.
    let map_scale = (1.0 / latent as f64).sqrt();
    let p_a = Mat::from_fn(latent, cfg.d_audio, |_, _| map_scale * normal());
    let p_v = Mat::from_fn(latent, cfg.d_visual, |_, _| map_scale * normal());
    let centroids = Mat::from_fn(cfg.classes, latent, |_, _| normal());

    let labels: Vec<usize> = (0..n).map(|i| i / cfg.per_class).collect();
    let z = Mat::from_fn(n, latent, |i, j| {
        centroids.get(labels[i], j) + cfg.cross_noise * normal()
    });
    let mut audio = mul(&z, &p_a);
    let mut visual = mul(&z, &p_v);
    for x in audio.as_mut_slice() {
        *x += cfg.noise * normal();
    }
    for x in visual.as_mut_slice() {
        *x += cfg.noise * normal();
    }
    Dataset::new(audio.cast(), visual.cast(), labels, cfg.classes)
}
