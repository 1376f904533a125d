//! Cosine ranking and category-level retrieval metrics.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_atomic, write_json};
use crate::numerics::{mul_tr, Mat};
use crate::scalar::Real;

/// Precision-scope cutoffs before clipping to the candidate count.
pub const DEFAULT_SCOPES: [usize; 7] = [10, 25, 50, 100, 250, 500, 1000];

/// Cosine similarity between every query row and every candidate row.
pub fn similarity_matrix<T: Real>(queries: &Mat<T>, candidates: &Mat<T>) -> Result<Mat<T>> {
    if queries.cols() != candidates.cols() {
        return Err(Error::shape(
            "similarity_matrix",
            queries.cols(),
            candidates.cols(),
        ));
    }
    let q = unit_rows(queries)?;
    let c = unit_rows(candidates)?;
    Ok(mul_tr(&q, &c))
}

fn unit_rows<T: Real>(x: &Mat<T>) -> Result<Mat<T>> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm == T::zero() || !norm.is_finite() {
            return Err(Error::ZeroNormRow { row: r });
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}

/// Candidate indices by descending score; equal scores keep ascending index order.
pub fn rank<T: Real>(scores: &[T]) -> Result<Vec<usize>> {
    if let Some(index) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NanScore { index });
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    Ok(idx)
}

/// Average precision over the full ranked list; 0 when nothing is relevant.
pub fn average_precision(ranked_labels: &[usize], query_label: usize) -> Result<f64> {
    if ranked_labels.is_empty() {
        return Err(Error::EmptyInput("average_precision"));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &l) in ranked_labels.iter().enumerate() {
        if l == query_label {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(if hits == 0 { 0.0 } else { sum / hits as f64 })
}

/// Cutoffs clipped to `n_candidates`, sorted and deduplicated.
pub fn clip_scopes(scopes: &[usize], n_candidates: usize) -> Vec<usize> {
    let mut out: Vec<usize> = scopes
        .iter()
        .map(|&k| k.min(n_candidates))
        .filter(|&k| k > 0)
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScopePoint {
    #[serde(rename = "K")]
    pub k: usize,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Directional<V> {
    pub a2v: V,
    pub v2a: V,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map_a2v: f64,
    pub map_v2a: f64,
    pub map_avg: f64,
    pub precision_scope: Directional<Vec<ScopePoint>>,
    pub per_category_ap: Directional<Vec<f64>>,
    pub n_queries: usize,
    pub n_candidates: usize,
}

impl EvalReport {
    /// `direction,K,precision` rows for both directions.
    pub fn precision_csv(&self) -> String {
        let mut s = String::from("direction,K,precision\n");
        for (dir, pts) in [
            ("a2v", &self.precision_scope.a2v),
            ("v2a", &self.precision_scope.v2a),
        ] {
            for p in pts {
                s.push_str(&format!("{dir},{},{}\n", p.k, p.precision));
            }
        }
        s
    }

    pub fn write(&self, json: &Path, csv: &Path) -> Result<()> {
        write_json(json, self)?;
        write_atomic(csv, self.precision_csv().as_bytes())
    }
}

/// Metrics of one retrieval direction.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionMetrics {
    pub map: f64,
    pub precision: Vec<ScopePoint>,
    pub per_category: Vec<f64>,
    pub ap: Vec<f64>,
}

/// MAP, precision@K and per-category AP from per-query rankings.
///
/// `rankings[q]` lists candidate indices best first; candidate `j` has label
/// `candidate_labels[j]`.
pub fn direction_metrics(
    rankings: &[Vec<usize>],
    query_labels: &[usize],
    candidate_labels: &[usize],
    num_classes: usize,
    scopes: &[usize],
) -> Result<DirectionMetrics> {
    if rankings.len() != query_labels.len() {
        return Err(Error::shape(
            "direction_metrics",
            query_labels.len(),
            rankings.len(),
        ));
    }
    if rankings.is_empty() {
        return Err(Error::EmptyInput("direction_metrics"));
    }
    if let Some((row, &label)) = query_labels
        .iter()
        .chain(candidate_labels)
        .enumerate()
        .find(|(_, &l)| l >= num_classes)
    {
        return Err(Error::LabelOutOfRange {
            row,
            label,
            classes: num_classes,
        });
    }
    let nc = candidate_labels.len();
    let scopes = clip_scopes(scopes, nc);
    let per_query: Vec<(f64, Vec<usize>)> = rankings
        .par_iter()
        .zip(query_labels.par_iter())
        .map(|(ranking, &q)| {
            if ranking.len() != nc {
                return Err(Error::shape(
                    "direction_metrics",
                    format!("ranking of {nc}"),
                    ranking.len(),
                ));
            }
            let ranked: Vec<usize> = ranking.iter().map(|&j| candidate_labels[j]).collect();
            let ap = average_precision(&ranked, q)?;
            let hits = scopes
                .iter()
                .map(|&k| ranked[..k].iter().filter(|&&l| l == q).count())
                .collect();
            Ok((ap, hits))
        })
        .collect::<Result<_>>()?;

    let nq = rankings.len() as f64;
    let mut map = 0.0;
    let mut cat_sum = vec![0.0; num_classes];
    let mut cat_n = vec![0usize; num_classes];
    for ((ap, _), &q) in per_query.iter().zip(query_labels) {
        map += ap;
        cat_sum[q] += ap;
        cat_n[q] += 1;
    }
    let precision = scopes
        .iter()
        .enumerate()
        .map(|(s, &k)| {
            let sum: f64 = per_query.iter().map(|(_, h)| h[s] as f64 / k as f64).sum();
            ScopePoint {
                k,
                precision: sum / nq,
            }
        })
        .collect();
    let per_category = cat_sum
        .iter()
        .zip(&cat_n)
        .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    Ok(DirectionMetrics {
        map: map / nq,
        precision,
        per_category,
        ap: per_query.into_iter().map(|(ap, _)| ap).collect(),
    })
}

/// Report from rankings in both directions over one labelled test set.
pub fn evaluate_rankings(
    a2v: &[Vec<usize>],
    v2a: &[Vec<usize>],
    labels: &[usize],
    num_classes: usize,
    scopes: &[usize],
) -> Result<EvalReport> {
    let fwd = direction_metrics(a2v, labels, labels, num_classes, scopes)?;
    let bwd = direction_metrics(v2a, labels, labels, num_classes, scopes)?;
    Ok(EvalReport {
        map_a2v: fwd.map,
        map_v2a: bwd.map,
        map_avg: (fwd.map + bwd.map) / 2.0,
        precision_scope: Directional {
            a2v: fwd.precision,
            v2a: bwd.precision,
        },
        per_category_ap: Directional {
            a2v: fwd.per_category,
            v2a: bwd.per_category,
        },
        n_queries: labels.len(),
        n_candidates: labels.len(),
    })
}

/// Rankings for every row of a score matrix.
pub fn rank_rows<T: Real>(scores: &Mat<T>) -> Result<Vec<Vec<usize>>> {
    (0..scores.rows())
        .into_par_iter()
        .map(|r| rank(scores.row(r)))
        .collect()
}

/// Report from precomputed audio-to-visual and visual-to-audio score matrices.
pub fn evaluate_scores<T: Real>(
    a2v: &Mat<T>,
    v2a: &Mat<T>,
    labels: &[usize],
    num_classes: usize,
    scopes: &[usize],
) -> Result<EvalReport> {
    let n = labels.len();
    for s in [a2v, v2a] {
        if s.shape() != (n, n) {
            return Err(Error::shape(
                "evaluate_scores",
                format!("{n}x{n}"),
                format!("{}x{}", s.rows(), s.cols()),
            ));
        }
    }
    evaluate_rankings(
        &rank_rows(a2v)?,
        &rank_rows(v2a)?,
        labels,
        num_classes,
        scopes,
    )
}

/// Cross-modal evaluation: each audio row queries all visual rows and vice
/// versa, the paired item included.
pub fn evaluate<T: Real>(
    audio: &Mat<T>,
    visual: &Mat<T>,
    labels: &[usize],
    num_classes: usize,
    scopes: &[usize],
) -> Result<EvalReport> {
    if audio.rows() != labels.len() || visual.rows() != labels.len() {
        return Err(Error::shape(
            "evaluate",
            format!("{} rows", labels.len()),
            format!("audio {}, visual {}", audio.rows(), visual.rows()),
        ));
    }
    let a2v = similarity_matrix(audio, visual)?;
    let v2a = a2v.transpose();
    evaluate_scores(&a2v, &v2a, labels, num_classes, scopes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tests::gaussian;

    #[test]
    fn cosine_cases() {
        let q = Mat::<f64>::from_rows(&[vec![1.0, 0.0], vec![3.0, 4.0]]).unwrap();
        let c = Mat::from_rows(&[vec![0.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let s = similarity_matrix(&q, &c).unwrap();
        assert_eq!(s.get(0, 0), 0.0);
        assert!((s.get(1, 1) - 1.0).abs() < 1e-15);
        let scaled = Mat::from_rows(&[vec![5.0, 0.0], vec![3.0, 4.0]]).unwrap();
        assert!(similarity_matrix(&scaled, &c).unwrap().max_abs_diff(&s) < 1e-12);
        let zero = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            similarity_matrix(&zero, &c),
            Err(Error::ZeroNormRow { row: 1 })
        ));
    }

    #[test]
    fn rank_cases() {
        assert_eq!(rank(&[0.1, 0.9, 0.5]).unwrap(), vec![1, 2, 0]);
        assert_eq!(rank(&[0.3; 5]).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(matches!(
            rank(&[0.1, f64::NAN]),
            Err(Error::NanScore { index: 1 })
        ));
    }

    #[test]
    fn ap_cases() {
        let ap = average_precision(&[0, 1, 0], 0).unwrap();
        assert!((ap - 0.5 * (1.0 + 2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(average_precision(&[2, 2, 2], 2).unwrap(), 1.0);
        assert_eq!(average_precision(&[1, 1], 0).unwrap(), 0.0);
        assert!(average_precision(&[], 0).is_err());
    }

    #[test]
    fn perfect_clusters_score_one() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let emb = Mat::from_fn(30, 3, |i, j| {
            if labels[i] == j {
                1.0 + i as f64 * 0.01
            } else {
                0.0
            }
        });
        let r = evaluate(&emb, &emb, &labels, 3, &DEFAULT_SCOPES).unwrap();
        assert_eq!((r.map_a2v, r.map_v2a, r.map_avg), (1.0, 1.0, 1.0));
        assert_eq!(
            r.precision_scope
                .a2v
                .iter()
                .map(|p| p.k)
                .collect::<Vec<_>>(),
            vec![10, 25, 30]
        );
        assert_eq!(r.precision_scope.a2v[0].precision, 1.0);
        assert!((r.precision_scope.a2v[2].precision - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_category_ap.v2a, vec![1.0; 3]);
    }

    #[test]
    fn csv_and_json_layout() {
        let labels = vec![0, 1, 0, 1];
        let r = evaluate(&gaussian(4, 2, 1), &gaussian(4, 2, 2), &labels, 2, &[2, 10]).unwrap();
        let csv = r.precision_csv();
        assert!(csv.starts_with("direction,K,precision\na2v,2,"));
        assert_eq!(csv.lines().count(), 5);
        let v = serde_json::to_value(&r).unwrap();
        for key in [
            "map_a2v",
            "map_v2a",
            "map_avg",
            "precision_scope",
            "per_category_ap",
            "n_queries",
            "n_candidates",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert!(v["precision_scope"]["a2v"][0].get("K").is_some());
    }

    #[test]
    fn rotation_and_scaling_invariance() {
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let a = gaussian(40, 3, 3);
        let v = gaussian(40, 3, 4);
        let base = evaluate(&a, &v, &labels, 4, &DEFAULT_SCOPES).unwrap();
        let (c, s) = (0.6f64, 0.8f64);
        let rot =
            Mat::from_rows(&[vec![c, -s, 0.0], vec![s, c, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let turn = |m: &Mat<f64>| crate::numerics::mul(m, &rot).scale(3.0);
        let moved = evaluate(&turn(&a), &turn(&v), &labels, 4, &DEFAULT_SCOPES).unwrap();
        assert!((moved.map_avg - base.map_avg).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn rank_is_a_permutation(scores in proptest::collection::vec(-1.0f64..1.0, 1..50)) {
            let mut r = rank(&scores).unwrap();
            for w in r.windows(2) {
                proptest::prop_assert!(scores[w[0]] >= scores[w[1]]);
            }
            r.sort_unstable();
            proptest::prop_assert_eq!(r, (0..scores.len()).collect::<Vec<_>>());
        }
    }
}
