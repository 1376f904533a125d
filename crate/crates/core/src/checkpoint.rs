//! Single-file model checkpoints.
//!
//! Layout: one line of UTF-8 JSON ([`CheckpointHeader`]) terminated by `\n`,
//! followed by little-endian `f64` values. The payload holds the four branches
//! in the order `f_ex_audio, g_ex_visual, psi_im_audio, tau_im_visual`, each as
//! weight then bias per layer (weights row-major, `in x out`), then the
//! normalizer vectors `audio_mean, audio_scale, visual_mean, visual_scale` if
//! present.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read, write_atomic};
use crate::network::{BranchNet, ModelParams};
use crate::preprocess::Normalizer;
use crate::scalar::Real;
use crate::trainer::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;
const KIND: &str = "dualspace_checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub kind: String,
    pub d_audio: usize,
    pub d_visual: usize,
    pub k: usize,
    pub audio_hidden: Vec<usize>,
    pub visual_hidden: Vec<usize>,
    pub share_ex_im: bool,
    pub normalized: bool,
    /// Number of `f64` values in the payload.
    pub payload_len: usize,
    pub config: TrainConfig,
}

/// Everything needed to reproduce the branch outputs of a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    pub normalizer: Option<Normalizer>,
    pub config: TrainConfig,
}

impl<T: Real> Checkpoint<T> {
    pub fn header(&self) -> CheckpointHeader {
        let p = &self.params;
        let norm_len = self
            .normalizer
            .as_ref()
            .map_or(0, |n| 2 * (n.audio_mean.len() + n.visual_mean.len()));
        CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            kind: KIND.into(),
            d_audio: p.d_audio(),
            d_visual: p.d_visual(),
            k: p.k,
            audio_hidden: p.audio_hidden(),
            visual_hidden: p.visual_hidden(),
            share_ex_im: p.share_ex_im,
            normalized: self.normalizer.is_some(),
            payload_len: p.num_params() + norm_len,
            config: self.config.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = self.header();
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        out.reserve(8 * header.payload_len);
        for t in self.params.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_f64().unwrap().to_le_bytes());
            }
        }
        if let Some(n) = &self.normalizer {
            for v in [
                &n.audio_mean,
                &n.audio_scale,
                &n.visual_mean,
                &n.visual_scale,
            ] {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let format = |detail: String| Error::Format {
            what: "checkpoint",
            detail,
        };
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| format("missing header line".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| format(format!("bad header: {e}")))?;
        if header.kind != KIND || header.format_version != CHECKPOINT_VERSION {
            return Err(format(format!(
                "unsupported checkpoint {:?} version {}",
                header.kind, header.format_version
            )));
        }
        let audio_dims = [&[header.d_audio][..], &header.audio_hidden, &[header.k]].concat();
        let visual_dims = [&[header.d_visual][..], &header.visual_hidden, &[header.k]].concat();
        if audio_dims.contains(&0) || visual_dims.contains(&0) {
            return Err(format("zero layer width in header".into()));
        }
        let mut params = ModelParams {
            f_ex_audio: BranchNet::zeros(&audio_dims),
            g_ex_visual: BranchNet::zeros(&visual_dims),
            psi_im_audio: BranchNet::zeros(&audio_dims),
            tau_im_visual: BranchNet::zeros(&visual_dims),
            k: header.k,
            share_ex_im: header.share_ex_im,
        };
        let norm_len = if header.normalized {
            2 * (header.d_audio + header.d_visual)
        } else {
            0
        };
        let expected = params.num_params() + norm_len;
        let payload = &bytes[nl + 1..];
        if header.payload_len != expected || payload.len() != 8 * expected {
            return Err(Error::SizeMismatch {
                path: path.to_path_buf(),
                expected_bytes: 8 * expected as u64,
                found_bytes: payload.len() as u64,
            });
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for t in params.tensors_mut() {
            for (dst, v) in t.iter_mut().zip(&mut values) {
                *dst = T::lit(v);
            }
        }
        let normalizer = if header.normalized {
            let mut take = |len: usize| -> Vec<f64> { (&mut values).take(len).collect() };
            Some(Normalizer {
                audio_mean: take(header.d_audio),
                audio_scale: take(header.d_audio),
                visual_mean: take(header.d_visual),
                visual_scale: take(header.d_visual),
            })
        } else {
            None
        };
        let ckpt = Self {
            params,
            normalizer,
            config: header.config,
        };
        let norm_finite = ckpt.normalizer.as_ref().is_none_or(|n| {
            [
                &n.audio_mean,
                &n.audio_scale,
                &n.visual_mean,
                &n.visual_scale,
            ]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
        });
        if !ckpt.params.is_finite() || !norm_finite {
            return Err(Error::NonFinite {
                what: format!("checkpoint {}", path.display()),
            });
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read(path)?, path)
    }
}
