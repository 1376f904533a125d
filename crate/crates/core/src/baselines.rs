//! Closed-form reference systems: paired CCA, Cluster-CCA and random ranking.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Modality};
use crate::error::{Error, Result};
use crate::numerics::{cca_from_moments, cca_solve, tr_mul, Mat};
use crate::retrieval::{evaluate_rankings, EvalReport};
use crate::scalar::Real;

/// Default cap on intra-class cross-modal pairs per class.
pub const DEFAULT_PAIR_BUDGET: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Cca,
    ClusterCca,
    Random,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Cca => "cca",
            BaselineKind::ClusterCca => "cluster_cca",
            BaselineKind::Random => "random",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cca" => Ok(BaselineKind::Cca),
            "cluster_cca" | "cluster-cca" => Ok(BaselineKind::ClusterCca),
            "random" => Ok(BaselineKind::Random),
            other => Err(Error::InvalidConfig(format!(
                "unknown baseline kind {other:?}"
            ))),
        }
    }
}

/// Linear projections of the raw (normalized) features of each modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LinearBaseline<T> {
    pub kind: BaselineKind,
    pub proj_audio: Mat<T>,
    pub proj_visual: Mat<T>,
    pub mean_audio: Vec<T>,
    pub mean_visual: Vec<T>,
    pub k_out: usize,
    pub correlations: Vec<T>,
}

impl<T: Real> LinearBaseline<T> {
    pub fn embed(&self, features: &Mat<T>, modality: Modality) -> Result<Mat<T>> {
        let (w, mean) = match modality {
            Modality::Audio => (&self.proj_audio, &self.mean_audio),
            Modality::Visual => (&self.proj_visual, &self.mean_visual),
        };
        if features.cols() != w.rows() {
            return Err(Error::shape(
                "LinearBaseline::embed",
                format!("{} {} columns", w.rows(), modality.as_str()),
                features.cols(),
            ));
        }
        Ok(crate::numerics::mul(&features.sub_row_vector(mean), w))
    }
}

/// Paired CCA between the audio and visual rows of `train`.
pub fn fit_cca_baseline<T: Real>(
    train: &Dataset<T>,
    k_out: usize,
    ridge: T,
) -> Result<LinearBaseline<T>> {
    let sol = cca_solve(&train.audio, &train.visual, k_out, ridge)?;
    Ok(LinearBaseline {
        kind: BaselineKind::Cca,
        proj_audio: sol.wx,
        proj_visual: sol.wy,
        mean_audio: sol.x_mean,
        mean_visual: sol.y_mean,
        k_out,
        correlations: sol.correlations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterCcaOptions {
    /// Maximum pairs per class; larger classes are subsampled uniformly.
    pub pair_budget: usize,
    pub seed: u64,
}

impl Default for ClusterCcaOptions {
    fn default() -> Self {
        Self {
            pair_budget: DEFAULT_PAIR_BUDGET,
            seed: 0,
        }
    }
}

pub fn fit_cluster_cca_baseline<T: Real>(
    train: &Dataset<T>,
    k_out: usize,
    ridge: T,
) -> Result<LinearBaseline<T>> {
    fit_cluster_cca_baseline_with(train, k_out, ridge, &ClusterCcaOptions::default())
}

/// CCA over every intra-class (audio, visual) pair, capped per class.
///
/// The expanded pairing is never materialized: with `C[i][j]` the number of
/// times audio row `i` is paired with visual row `j`, the moments are
/// count-weighted means and covariances and `Sav = Aᵀ C V / (P - 1)` on the
/// centered features, `P` the total pair count.
pub fn fit_cluster_cca_baseline_with<T: Real>(
    train: &Dataset<T>,
    k_out: usize,
    ridge: T,
    opts: &ClusterCcaOptions,
) -> Result<LinearBaseline<T>> {
    if opts.pair_budget == 0 {
        return Err(Error::InvalidConfig(
            "pair_budget must be at least 1".into(),
        ));
    }
    let pairs = cluster_pairs(train, opts)?;
    let n = train.len();
    let p = pairs.len();
    if p < 2 {
        return Err(Error::DegenerateSample {
            op: "fit_cluster_cca_baseline",
            n: p,
            min: 2,
        });
    }
    let mut count_a = vec![0usize; n];
    let mut count_v = vec![0usize; n];
    for &(i, j) in &pairs {
        count_a[i] += 1;
        count_v[j] += 1;
    }
    let mean_a = weighted_mean(&train.audio, &count_a, p);
    let mean_v = weighted_mean(&train.visual, &count_v, p);
    let ca = train.audio.sub_row_vector(&mean_a);
    let cv = train.visual.sub_row_vector(&mean_v);
    let denom = T::from_usize(p - 1).unwrap();

    let saa = weighted_gram(&ca, &count_a).scale(T::one() / denom);
    let svv = weighted_gram(&cv, &count_v).scale(T::one() / denom);
    // (C V) row i accumulates every visual partner of audio row i.
    let mut cv_sum = Mat::zeros(n, cv.cols());
    for &(i, j) in &pairs {
        for (d, &s) in cv_sum.row_mut(i).iter_mut().zip(cv.row(j)) {
            *d += s;
        }
    }
    let sav = tr_mul(&ca, &cv_sum).scale(T::one() / denom);

    let sol = cca_from_moments(&saa, &svv, &sav, mean_a, mean_v, k_out, ridge)?;
    Ok(LinearBaseline {
        kind: BaselineKind::ClusterCca,
        proj_audio: sol.wx,
        proj_visual: sol.wy,
        mean_audio: sol.x_mean,
        mean_visual: sol.y_mean,
        k_out,
        correlations: sol.correlations,
    })
}

/// Intra-class `(audio_row, visual_row)` pairs in class, then row-major order.
pub fn cluster_pairs<T: Real>(
    train: &Dataset<T>,
    opts: &ClusterCcaOptions,
) -> Result<Vec<(usize, usize)>> {
    let mut members = vec![Vec::new(); train.num_classes];
    for (i, &l) in train.labels.iter().enumerate() {
        members[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut pairs = Vec::new();
    for (class, rows) in members.iter().enumerate() {
        if rows.is_empty() {
            return Err(Error::EmptyClass { class });
        }
        let m = rows.len();
        let total = m * m;
        if total <= opts.pair_budget {
            for &i in rows {
                pairs.extend(rows.iter().map(|&j| (i, j)));
            }
        } else {
            let mut picked = index::sample(&mut rng, total, opts.pair_budget).into_vec();
            picked.sort_unstable();
            pairs.extend(picked.into_iter().map(|f| (rows[f / m], rows[f % m])));
        }
    }
    Ok(pairs)
}

fn weighted_mean<T: Real>(x: &Mat<T>, counts: &[usize], total: usize) -> Vec<T> {
    let mut mean = vec![T::zero(); x.cols()];
    for (row, &c) in x.iter_rows().zip(counts) {
        if c == 0 {
            continue;
        }
        let w = T::from_usize(c).unwrap();
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += w * v;
        }
    }
    let t = T::from_usize(total).unwrap();
    mean.iter_mut().for_each(|m| *m /= t);
    mean
}

/// `Xᵀ diag(counts) X`.
fn weighted_gram<T: Real>(x: &Mat<T>, counts: &[usize]) -> Mat<T> {
    let mut scaled = x.clone();
    for (r, &c) in counts.iter().enumerate() {
        let s = T::from_usize(c).unwrap().sqrt();
        scaled.row_mut(r).iter_mut().for_each(|v| *v *= s);
    }
    tr_mul(&scaled, &scaled).symmetrized()
}

/// Ridge candidates scanned by [`select_ridge`].
pub const RIDGE_GRID: [f64; 8] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0];

/// Fraction of the training split used to fit during ridge selection.
pub const RIDGE_SELECTION_FRAC: f64 = 0.75;

/// Fits a linear baseline of the given kind with a fixed ridge.
pub fn fit_linear_baseline<T: Real>(
    kind: BaselineKind,
    train: &Dataset<T>,
    k_out: usize,
    ridge: T,
    seed: u64,
) -> Result<LinearBaseline<T>> {
    match kind {
        BaselineKind::Cca => fit_cca_baseline(train, k_out, ridge),
        BaselineKind::ClusterCca => fit_cluster_cca_baseline_with(
            train,
            k_out,
            ridge,
            &ClusterCcaOptions {
                seed,
                ..ClusterCcaOptions::default()
            },
        ),
        BaselineKind::Random => Err(Error::InvalidConfig(
            "the random baseline has no projections".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeSelection {
    pub ridge: f64,
    /// `(ridge, validation map_avg)` for every grid point, in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Picks the ridge with the best validation MAP on a seeded stratified
/// holdout of `train`; ties go to the smaller ridge.
///
/// Raw-feature CCA with more feature dimensions than samples is ill-posed,
/// and the within-class pairing of Cluster-CCA overfits worst; selecting the
/// ridge on training data only keeps the test split untouched.
pub fn select_ridge<T: Real>(
    kind: BaselineKind,
    train: &Dataset<T>,
    k_out: usize,
    grid: &[f64],
    seed: u64,
) -> Result<RidgeSelection> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("ridge grid"));
    }
    let (fit, val) = crate::dataset::split(train, RIDGE_SELECTION_FRAC, seed)?;
    let mut scores = Vec::with_capacity(grid.len());
    let mut best = (f64::NEG_INFINITY, grid[0]);
    for &ridge in grid {
        let model = fit_linear_baseline(kind, &fit, k_out, T::lit(ridge), seed)?;
        let report = crate::retrieval::evaluate(
            &model.embed(&val.audio, Modality::Audio)?,
            &model.embed(&val.visual, Modality::Visual)?,
            &val.labels,
            val.num_classes,
            &crate::retrieval::DEFAULT_SCOPES,
        )?;
        log::debug!(
            "{} ridge {ridge}: validation map {:.4}",
            kind.as_str(),
            report.map_avg
        );
        if report.map_avg > best.0 {
            best = (report.map_avg, ridge);
        }
        scores.push((ridge, report.map_avg));
    }
    Ok(RidgeSelection {
        ridge: best.1,
        scores,
    })
}

/// Ranks candidates by an independent seeded shuffle per query, both directions.
pub fn random_baseline<T: Real>(
    test: &Dataset<T>,
    seed: u64,
    scopes: &[usize],
) -> Result<EvalReport> {
    let n = test.len();
    if n == 0 {
        return Err(Error::EmptyInput("random_baseline"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = || -> Vec<Vec<usize>> {
        (0..n)
            .map(|_| {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                order
            })
            .collect()
    };
    let a2v = shuffled();
    let v2a = shuffled();
    evaluate_rankings(&a2v, &v2a, &test.labels, test.num_classes, scopes)
}

/// Expected AP of a uniformly random ranking of `n` candidates, `r` relevant.
pub fn random_ap_expectation(n: usize, r: usize) -> f64 {
    if r == 0 {
        return 0.0;
    }
    if n == 1 {
        return 1.0;
    }
    let h: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
    let (n, r) = (n as f64, r as f64);
    h / n + (r - 1.0) / (n - 1.0) * (1.0 - h / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthConfig};
    use crate::numerics::tests::gaussian;
    use crate::retrieval::DEFAULT_SCOPES;

    fn data(classes: usize, per_class: usize, seed: u64) -> Dataset<f64> {
        synth_generate(&SynthConfig {
            classes,
            per_class,
            d_audio: 5,
            d_visual: 7,
            seed,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn duplicated_view_has_unit_correlations() {
        let x = gaussian(80, 4, 3);
        let d = Dataset::new(x.clone(), x, vec![0; 80], 1).unwrap();
        let b = fit_cca_baseline(&d, 4, 1e-9).unwrap();
        assert!(b.correlations.iter().all(|&c| (c - 1.0).abs() < 1e-6));
    }

    #[test]
    fn cca_baseline_delegates_to_solver() {
        let d = data(3, 30, 1);
        let b = fit_cca_baseline(&d, 3, 1e-4).unwrap();
        let o = cca_solve(&d.audio, &d.visual, 3, 1e-4).unwrap();
        assert_eq!(b.correlations, o.correlations);
        assert_eq!(
            b.embed(&d.audio, Modality::Audio).unwrap(),
            o.project_x(&d.audio).unwrap()
        );
        assert!(b.embed(&d.audio, Modality::Visual).is_err());
    }

    #[test]
    fn singleton_classes_reduce_to_paired_cca() {
        let n = 40;
        let audio = gaussian(n, 5, 8);
        let visual = audio
            .select_cols(0..3)
            .hcat(&gaussian(n, 3, 9))
            .add(&gaussian(n, 6, 10).scale(0.5));
        let d = Dataset::new(audio, visual, (0..n).collect(), n).unwrap();
        let c = fit_cluster_cca_baseline(&d, 3, 1e-4).unwrap();
        let p = fit_cca_baseline(&d, 3, 1e-4).unwrap();
        for j in 0..3 {
            assert!((c.correlations[j] - p.correlations[j]).abs() < 1e-8);
        }
        assert!(c.proj_audio.max_abs_diff(&p.proj_audio) < 1e-8);
        assert!(c.proj_visual.max_abs_diff(&p.proj_visual) < 1e-8);
    }

    #[test]
    fn identical_within_class_features_give_unit_top_correlation() {
        let centers_a = gaussian(2, 3, 4);
        let centers_v = gaussian(2, 4, 5);
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let audio = centers_a.select_rows(&labels);
        let visual = centers_v.select_rows(&labels);
        let d = Dataset::new(audio, visual, labels, 2).unwrap();
        let c = fit_cluster_cca_baseline(&d, 1, 1e-6).unwrap();
        assert!(
            (c.correlations[0] - 1.0).abs() < 1e-4,
            "{}",
            c.correlations[0]
        );
    }

    #[test]
    fn expanded_moments_match_materialized_pairs() {
        let d = data(3, 6, 2);
        let opts = ClusterCcaOptions {
            pair_budget: 20,
            seed: 3,
        };
        let pairs = cluster_pairs(&d, &opts).unwrap();
        assert_eq!(pairs.len(), 60);
        assert!(pairs.iter().all(|&(i, j)| d.labels[i] == d.labels[j]));
        let (ia, iv): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let oracle = cca_solve(
            &d.audio.select_rows(&ia),
            &d.visual.select_rows(&iv),
            3,
            1e-4,
        )
        .unwrap();
        let fit = fit_cluster_cca_baseline_with(&d, 3, 1e-4, &opts).unwrap();
        for (a, b) in fit.correlations.iter().zip(&oracle.correlations) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(fit.proj_audio.max_abs_diff(&oracle.wx) < 1e-8);
    }

    #[test]
    fn ridge_selection_prefers_regularization_when_dims_exceed_samples() {
        let d = synth_generate::<f64>(&SynthConfig {
            classes: 3,
            per_class: 20,
            d_audio: 10,
            d_visual: 80,
            seed: 4,
            ..SynthConfig::default()
        })
        .unwrap();
        let sel = select_ridge(BaselineKind::ClusterCca, &d, 3, &RIDGE_GRID, 1).unwrap();
        assert_eq!(sel.scores.len(), RIDGE_GRID.len());
        assert!(sel.ridge > RIDGE_GRID[0], "{sel:?}");
        let best = sel
            .scores
            .iter()
            .map(|s| s.1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(
            sel.scores.iter().find(|s| s.0 == sel.ridge).unwrap().1,
            best
        );
        assert_eq!(
            sel,
            select_ridge(BaselineKind::ClusterCca, &d, 3, &RIDGE_GRID, 1).unwrap()
        );
        assert!(select_ridge(BaselineKind::Random, &d, 3, &RIDGE_GRID, 1).is_err());
    }

    #[test]
    fn empty_class_is_rejected() {
        let d = Dataset::new(
            gaussian(6, 2, 1),
            gaussian(6, 2, 2),
            vec![0, 0, 0, 2, 2, 2],
            3,
        )
        .unwrap();
        assert!(matches!(
            fit_cluster_cca_baseline(&d, 1, 1e-4),
            Err(Error::EmptyClass { class: 1 })
        ));
    }

    #[test]
    fn random_single_class_is_perfect_and_seeded() {
        let d = data(1, 30, 0);
        let r = random_baseline(&d, 5, &DEFAULT_SCOPES).unwrap();
        assert_eq!(r.map_avg, 1.0);
        let d = data(4, 20, 0);
        assert_eq!(
            random_baseline(&d, 5, &DEFAULT_SCOPES).unwrap(),
            random_baseline(&d, 5, &DEFAULT_SCOPES).unwrap()
        );
    }

    #[test]
    fn random_map_matches_analytic_expectation() {
        // 8 classes x 50: per-query AP sd ~0.04, 800 queries -> sd of the mean ~0.0015.
        let d = data(8, 50, 6);
        let r = random_baseline(&d, 11, &DEFAULT_SCOPES).unwrap();
        let expect = random_ap_expectation(400, 50);
        assert!(
            (r.map_avg - expect).abs() < 0.006,
            "{} vs {}",
            r.map_avg,
            expect
        );
    }

    #[test]
    fn analytic_expectation_matches_enumeration() {
        // n = 4, r = 2: average AP over all 6 placements of the relevant pair.
        let mut sum = 0.0;
        let mut count = 0.0;
        for a in 0..4 {
            for b in a + 1..4 {
                let labels: Vec<usize> = (0..4).map(|i| usize::from(i != a && i != b)).collect();
                sum += crate::retrieval::average_precision(&labels, 0).unwrap();
                count += 1.0;
            }
        }
        assert!((random_ap_expectation(4, 2) - sum / count).abs() < 1e-12);
    }
}
