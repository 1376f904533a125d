//! Directory format: `manifest.json`, `audio.f32`, `visual.f32`, `labels.u32`.
//! Payloads are headerless little-endian row-major arrays.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Modality, Split};
use crate::error::{Error, Result};
use crate::io::{read, write_atomic, write_json};
use crate::numerics::Mat;
use crate::scalar::Real;

pub const FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const AUDIO: &str = "audio.f32";
const VISUAL: &str = "visual.f32";
const LABELS: &str = "labels.u32";
const EMBEDDING: &str = "embedding.f32";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub n: usize,
    pub d_a: usize,
    pub d_v: usize,
    pub c: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

/// Writes `dataset` into `dir` (created if needed). Values are narrowed to `f32`.
pub fn save_dataset<T: Real>(dir: &Path, dataset: &Dataset<T>) -> Result<()> {
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        n: dataset.len(),
        d_a: dataset.d_audio(),
        d_v: dataset.d_visual(),
        c: dataset.num_classes,
        names: dataset.names.clone(),
        split: dataset.split.clone(),
    };
    write_atomic(&dir.join(AUDIO), &encode_f32(&dataset.audio))?;
    write_atomic(&dir.join(VISUAL), &encode_f32(&dataset.visual))?;
    write_atomic(&dir.join(LABELS), &encode_u32(&dataset.labels)?)?;
    write_json(&dir.join(MANIFEST), &manifest)
}

pub fn load_dataset<T: Real>(dir: &Path) -> Result<Dataset<T>> {
    let manifest: Manifest = read_manifest(&dir.join(MANIFEST))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format {
            what: "manifest",
            detail: format!("unsupported format_version {}", manifest.format_version),
        });
    }
    if manifest.n == 0 {
        return Err(Error::EmptyInput("load_dataset"));
    }
    let audio = decode_f32(&dir.join(AUDIO), manifest.n, manifest.d_a)?;
    let visual = decode_f32(&dir.join(VISUAL), manifest.n, manifest.d_v)?;
    let labels = decode_u32(&dir.join(LABELS), manifest.n)?;
    let mut ds = Dataset::new(audio, visual, labels, manifest.c)?;
    if let Some(names) = manifest.names {
        ds = ds.with_names(names)?;
    }
    if let Some(split) = manifest.split {
        ds = ds.with_split(split)?;
    }
    Ok(ds)
}

/// Manifest of an exported embedding matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub format_version: u32,
    pub kind: String,
    pub n: usize,
    pub d: usize,
    pub modality: Modality,
}

/// One modality's embeddings with the row labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile<T> {
    pub modality: Modality,
    pub embedding: Mat<T>,
    pub labels: Vec<usize>,
}

/// Writes `manifest.json`, `embedding.f32` and `labels.u32` into `dir`.
pub fn save_embeddings<T: Real>(dir: &Path, file: &EmbeddingFile<T>) -> Result<()> {
    if file.labels.len() != file.embedding.rows() {
        return Err(Error::shape(
            "save_embeddings",
            file.embedding.rows(),
            file.labels.len(),
        ));
    }
    let manifest = EmbeddingManifest {
        format_version: FORMAT_VERSION,
        kind: "embedding".into(),
        n: file.embedding.rows(),
        d: file.embedding.cols(),
        modality: file.modality,
    };
    write_atomic(&dir.join(EMBEDDING), &encode_f32(&file.embedding))?;
    write_atomic(&dir.join(LABELS), &encode_u32(&file.labels)?)?;
    write_json(&dir.join(MANIFEST), &manifest)
}

pub fn load_embeddings<T: Real>(dir: &Path) -> Result<EmbeddingFile<T>> {
    let manifest: EmbeddingManifest = read_manifest(&dir.join(MANIFEST))?;
    if manifest.format_version != FORMAT_VERSION || manifest.kind != "embedding" {
        return Err(Error::Format {
            what: "manifest",
            detail: format!("not a version {FORMAT_VERSION} embedding manifest"),
        });
    }
    Ok(EmbeddingFile {
        modality: manifest.modality,
        embedding: decode_f32(&dir.join(EMBEDDING), manifest.n, manifest.d)?,
        labels: decode_u32(&dir.join(LABELS), manifest.n)?,
    })
}

fn read_manifest<M: serde::de::DeserializeOwned>(path: &Path) -> Result<M> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        what: "manifest",
        detail: format!("{}: {e}", path.display()),
    })
}

fn encode_f32<T: Real>(m: &Mat<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(m.as_slice().len() * 4);
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_f32().unwrap().to_le_bytes());
    }
    out
}

fn encode_u32(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(labels.len() * 4);
    for &l in labels {
        let v =
            u32::try_from(l).map_err(|_| Error::InvalidConfig(format!("label {l} exceeds u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn checked_payload(path: &Path, count: usize) -> Result<Vec<u8>> {
    let bytes = read(path)?;
    let expected = count as u64 * 4;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: PathBuf::from(path),
            expected_bytes: expected,
            found_bytes: bytes.len() as u64,
        });
    }
    Ok(bytes)
}

fn decode_f32<T: Real>(path: &Path, rows: usize, cols: usize) -> Result<Mat<T>> {
    let bytes = checked_payload(path, rows * cols)?;
    let mut data = Vec::with_capacity(rows * cols);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: format!(
                    "{} at row {}, column {}",
                    path.display(),
                    i / cols.max(1),
                    i % cols.max(1)
                ),
            });
        }
        data.push(T::from_f32(v).unwrap());
    }
    Ok(Mat::from_raw(rows, cols, data))
}

fn decode_u32(path: &Path, n: usize) -> Result<Vec<usize>> {
    let bytes = checked_payload(path, n)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Dataset<f64> {
        let audio = Mat::from_fn(6, 3, |i, j| (i as f64) * 0.25 - j as f64);
        let visual = Mat::from_fn(6, 2, |i, j| (i * j) as f64 + 0.5);
        Dataset::new(audio, visual, vec![0, 1, 2, 0, 1, 2], 3).unwrap()
    }

    #[test]
    fn roundtrip_with_names_and_split() {
        let dir = tempfile::tempdir().unwrap();
        let d = sample()
            .with_names(vec!["dog".into(), "rain".into(), "car".into()])
            .unwrap()
            .with_split(Split {
                train: vec![0, 1, 2, 3],
                test: vec![4, 5],
            })
            .unwrap();
        save_dataset(dir.path(), &d).unwrap();
        let back: Dataset<f64> = load_dataset(dir.path()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn manifest_layout() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &sample()).unwrap();
        let v: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"format_version": 1, "n": 6, "d_a": 3, "d_v": 2, "c": 3})
        );
        assert_eq!(
            std::fs::metadata(dir.path().join(AUDIO)).unwrap().len(),
            6 * 3 * 4
        );
        let labels = std::fs::read(dir.path().join(LABELS)).unwrap();
        assert_eq!(&labels[4..8], &[1, 0, 0, 0]);
    }

    #[test]
    fn truncated_payload_reports_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &sample()).unwrap();
        let p = dir.path().join(AUDIO);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        match load_dataset::<f64>(dir.path()) {
            Err(Error::SizeMismatch {
                expected_bytes,
                found_bytes,
                ..
            }) => assert_eq!((expected_bytes, found_bytes), (72, 68)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn label_out_of_range_names_row() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &sample()).unwrap();
        let p = dir.path().join(LABELS);
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[16..20].copy_from_slice(&3u32.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            load_dataset::<f64>(dir.path()),
            Err(Error::LabelOutOfRange {
                row: 4,
                label: 3,
                classes: 3
            })
        ));
    }

    #[test]
    fn missing_and_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &sample()).unwrap();
        let p = dir.path().join(VISUAL);
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0..4].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            load_dataset::<f64>(dir.path()),
            Err(Error::NonFinite { .. })
        ));
        std::fs::remove_file(&p).unwrap();
        assert!(matches!(
            load_dataset::<f64>(dir.path()),
            Err(Error::MissingFile { .. })
        ));
    }

    #[test]
    fn embedding_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let file = EmbeddingFile {
            modality: Modality::Visual,
            embedding: Mat::from_fn(4, 2, |i, j| (i + 2 * j) as f32),
            labels: vec![0, 0, 1, 1],
        };
        save_embeddings(dir.path(), &file).unwrap();
        assert_eq!(load_embeddings::<f32>(dir.path()).unwrap(), file);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn roundtrip_is_bit_exact(
            n in 1usize..20,
            d_a in 1usize..6,
            d_v in 1usize..6,
            c in 1usize..5,
            seed in any::<u64>(),
        ) {
            use rand::{RngExt, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut draw = |_: usize, _: usize| f64::from(rng.random::<f32>() * 200.0 - 100.0);
            let audio = Mat::from_fn(n, d_a, &mut draw);
            let visual = Mat::from_fn(n, d_v, &mut draw);
            let labels = (0..n).map(|i| (i * 7 + seed as usize) % c).collect();
            let d = Dataset::new(audio, visual, labels, c).unwrap();
            let dir = tempfile::tempdir().unwrap();
            save_dataset(dir.path(), &d).unwrap();
            let back: Dataset<f64> = load_dataset(dir.path()).unwrap();
            prop_assert_eq!(back, d);
        }
    }
}
