//! Convergence diagnostics and target-model evaluation.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{compile_all, predictive_cross_entropy, Ensemble};
use crate::model::{l2_distance, EmbeddingPosterior, Observation, StimulusId};
use crate::seed::rng_from;
use crate::stats;

/// Posterior draws used by metrics when no count is given.
pub const DEFAULT_METRIC_MC_SAMPLES: usize = 64;

const SYMMETRY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    ExpectedPsych,
    TargetDot,
    TargetCosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    values: Array2<f64>,
    kind: SimilarityKind,
}

impl SimilarityMatrix {
    pub fn new(values: Array2<f64>, kind: SimilarityKind) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n {
            return Err(Error::arg("similarity matrix must be square"));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (values[[i, j]], values[[j, i]]);
                if !a.is_finite() || (a - b).abs() > SYMMETRY_TOLERANCE {
                    return Err(Error::arg(format!("entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        Ok(SimilarityMatrix { values, kind })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn kind(&self) -> SimilarityKind {
        self.kind
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    /// Strictly-upper-triangle entries in row-major order.
    pub fn upper(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                out.push(self.values[[i, j]]);
            }
        }
        out
    }

    /// Entry-wise mean of several matrices of the same size.
    pub fn mean(matrices: &[SimilarityMatrix]) -> Result<SimilarityMatrix> {
        let first = matrices.first().ok_or_else(|| Error::arg("no matrices to average"))?;
        let mut acc = Array2::zeros(first.values.dim());
        for m in matrices {
            if m.n() != first.n() {
                return Err(Error::arg("matrices differ in size"));
            }
            acc += &m.values;
        }
        acc /= matrices.len() as f64;
        Ok(SimilarityMatrix {
            values: acc,
            kind: first.kind,
        })
    }
}

/// `exp(-beta ||z_i - z_j||)` averaged over draws, with a unit diagonal.
fn mean_kernel_matrix(draws: &[Array2<f64>], beta: f64) -> Array2<f64> {
    let n = draws[0].nrows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            for z in draws {
                let zi = z.row(i);
                let zi = zi.as_slice().expect("standard layout");
                for (j, v) in row.iter_mut().enumerate().skip(i + 1) {
                    let zj = z.row(j);
                    *v += (-beta * l2_distance(zi, zj.as_slice().expect("standard layout"))).exp();
                }
            }
            row
        })
        .collect();
    let s = draws.len() as f64;
    let mut out = Array2::eye(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = rows[i][j] / s;
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    out
}

/// Monte-Carlo expected similarity matrix of one posterior. Each draw is a
/// joint sample of all locations; the diagonal is fixed at 1.
pub fn expected_similarity_matrix<R: Rng + ?Sized>(
    posterior: &EmbeddingPosterior,
    mc_samples: usize,
    rng: &mut R,
) -> Result<SimilarityMatrix> {
    if mc_samples == 0 {
        return Err(Error::arg("mc_samples must be positive"));
    }
    let draws: Vec<Array2<f64>> = (0..mc_samples).map(|_| posterior.sample(rng)).collect();
    SimilarityMatrix::new(mean_kernel_matrix(&draws, posterior.beta()), SimilarityKind::ExpectedPsych)
}

/// Similarity matrix of a fixed embedding.
pub fn point_similarity_matrix(z: ArrayView2<'_, f64>, beta: f64) -> Result<SimilarityMatrix> {
    SimilarityMatrix::new(mean_kernel_matrix(&[z.to_owned()], beta), SimilarityKind::ExpectedPsych)
}

/// Anything with an implied psychological similarity matrix.
pub trait ExpectedSimilarity {
    fn expected_similarity(&self, mc_samples: usize, seed: u64) -> Result<SimilarityMatrix>;
}

impl ExpectedSimilarity for EmbeddingPosterior {
    fn expected_similarity(&self, mc_samples: usize, seed: u64) -> Result<SimilarityMatrix> {
        expected_similarity_matrix(self, mc_samples, &mut rng_from(seed))
    }
}

impl ExpectedSimilarity for Ensemble {
    /// Equal-weight mean of the members' matrices.
    fn expected_similarity(&self, mc_samples: usize, seed: u64) -> Result<SimilarityMatrix> {
        SimilarityMatrix::mean(&member_matrices(self, mc_samples, seed)?)
    }
}

fn member_matrices(ensemble: &Ensemble, mc_samples: usize, seed: u64) -> Result<Vec<SimilarityMatrix>> {
    let mut rng = rng_from(seed);
    ensemble
        .members()
        .iter()
        .map(|m| expected_similarity_matrix(m, mc_samples, &mut rng))
        .collect()
}

fn check_pair(a: &SimilarityMatrix, b: &SimilarityMatrix) -> Result<()> {
    if a.n() != b.n() {
        return Err(Error::arg(format!("matrices of size {} and {} differ", a.n(), b.n())));
    }
    if a.n() < 3 {
        return Err(Error::arg("correlations need at least 3 stimuli"));
    }
    Ok(())
}

/// Pearson correlation of the strictly-upper-triangle entries.
pub fn pearson_upper(a: &SimilarityMatrix, b: &SimilarityMatrix) -> Result<f64> {
    check_pair(a, b)?;
    stats::pearson(&a.upper(), &b.upper())
        .ok_or_else(|| Error::UndefinedCorrelation("constant similarity entries".into()))
}

/// Spearman correlation (average ranks for ties) of the strictly-upper-
/// triangle entries.
pub fn spearman_upper(a: &SimilarityMatrix, b: &SimilarityMatrix) -> Result<f64> {
    check_pair(a, b)?;
    stats::spearman(&a.upper(), &b.upper())
        .ok_or_else(|| Error::UndefinedCorrelation("constant similarity entries".into()))
}

/// Mean squared Pearson correlation over the three member pairs.
pub fn within_ensemble_agreement(ensemble: &Ensemble, mc_samples: usize, seed: u64) -> Result<f64> {
    let mats = member_matrices(ensemble, mc_samples, seed)?;
    let mut total = 0.0;
    let mut pairs = 0.0;
    for i in 0..mats.len() {
        for j in (i + 1)..mats.len() {
            let r = pearson_upper(&mats[i], &mats[j])?;
            total += r * r;
            pairs += 1.0;
        }
    }
    Ok(total / pairs)
}

/// Squared Pearson correlation between the mean matrices of two ensembles.
pub fn consecutive_ensemble_agreement(
    earlier: &Ensemble,
    later: &Ensemble,
    mc_samples: usize,
    seed: u64,
) -> Result<f64> {
    if earlier.n() != later.n() {
        return Err(Error::arg("ensembles cover different catalogs"));
    }
    let a = earlier.expected_similarity(mc_samples, seed)?;
    let b = later.expected_similarity(mc_samples, seed ^ 0x5bd1_e995)?;
    let r = pearson_upper(&a, &b)?;
    Ok(r * r)
}

/// Weight-averaged cross-entropy on randomly generated trials of the
/// ensemble's prediction, which averages the members' predictive
/// distributions with equal weight in probability space.
pub fn coarse_loss<R: Rng + ?Sized>(
    ensemble: &Ensemble,
    coarse_set: &[Observation],
    mc_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if coarse_set.is_empty() {
        return Err(Error::arg("coarse set is empty"));
    }
    if mc_samples == 0 {
        return Err(Error::arg("mc_samples must be positive"));
    }
    let data = compile_all(coarse_set, ensemble.n())?;
    let draws: Vec<Array2<f64>> = ensemble
        .members()
        .iter()
        .flat_map(|m| (0..mc_samples).map(|_| m.sample(rng)).collect::<Vec<_>>())
        .collect();
    Ok(predictive_cross_entropy(&data, &draws, ensemble.beta()))
}

/// "Relative to `query`, `closer` is more similar than `farther`."
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub query: StimulusId,
    pub closer: StimulusId,
    pub farther: StimulusId,
    pub weight: f64,
}

/// Pairwise inequalities implied by a ranked judgment: each chosen
/// reference beats every later-chosen and every unchosen reference.
/// Unchosen references are mutually unordered, so `c` choices among `r`
/// references give `sum_{i=1..c} (r - i)` triplets.
pub fn expand_triplets(observation: &Observation) -> Result<Vec<Triplet>> {
    let trial = &observation.trial;
    let chosen = trial.decode(observation.outcome)?;
    let refs = trial.references();
    let mut out = Vec::new();
    for (i, &a) in chosen.iter().enumerate() {
        let beaten = chosen[i + 1..]
            .iter()
            .copied()
            .chain((0..refs.len()).filter(|p| !chosen.contains(p)));
        for b in beaten {
            out.push(Triplet {
                query: trial.query(),
                closer: refs[a],
                farther: refs[b],
                weight: observation.weight,
            });
        }
    }
    Ok(out)
}

pub fn expand_all(observations: &[Observation]) -> Result<Vec<Triplet>> {
    let mut out = Vec::new();
    for obs in observations {
        out.extend(expand_triplets(obs)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    L1,
    L2,
    Cosine,
}

impl Distance {
    /// Cosine distance is `1 - cos`; a zero vector has cosine 0 with
    /// everything.
    pub fn between(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            Distance::L2 => l2_distance(a, b),
            Distance::Cosine => 1.0 - cosine(a, b),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let norm = (dot(a, a) * dot(b, b)).sqrt();
    if norm > 0.0 {
        dot(a, b) / norm
    } else {
        0.0
    }
}

/// Weight-averaged fraction of triplets the features order correctly, i.e.
/// with `d(q, closer) < d(q, farther)`. Ties count as wrong. Rows of
/// `features` are indexed by stimulus id.
pub fn triplet_accuracy(features: ArrayView2<'_, f64>, triplets: &[Triplet], distance: Distance) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::arg("no triplets to score"));
    }
    let n = features.nrows();
    let row = |s: StimulusId| -> Result<Vec<f64>> {
        if s.index() >= n {
            return Err(Error::arg(format!("stimulus {s} has no feature row")));
        }
        Ok(features.row(s.index()).to_vec())
    };
    let (mut num, mut den, mut plain) = (0.0, 0.0, 0.0);
    for t in triplets {
        let q = row(t.query)?;
        let correct = distance.between(&q, &row(t.closer)?) < distance.between(&q, &row(t.farther)?);
        if correct {
            num += t.weight;
            plain += 1.0;
        }
        den += t.weight;
    }
    Ok(if den > 0.0 { num / den } else { plain / triplets.len() as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetSimilarity {
    Dot,
    Cosine,
}

/// Pairwise similarity of feature rows.
pub fn target_similarity_matrix(features: ArrayView2<'_, f64>, sim: TargetSimilarity) -> Result<SimilarityMatrix> {
    let n = features.nrows();
    let rows: Vec<Vec<f64>> = features.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = match sim {
                TargetSimilarity::Dot => dot(&rows[i], &rows[j]),
                TargetSimilarity::Cosine => cosine(&rows[i], &rows[j]),
            };
            values[[i, j]] = v;
            values[[j, i]] = v;
        }
    }
    let kind = match sim {
        TargetSimilarity::Dot => SimilarityKind::TargetDot,
        TargetSimilarity::Cosine => SimilarityKind::TargetCosine,
    };
    SimilarityMatrix::new(values, kind)
}

/// Spearman correlation between a target model's similarity matrix and a
/// psychological one.
pub fn embedding_correlation(
    features: ArrayView2<'_, f64>,
    psych: &SimilarityMatrix,
    sim: TargetSimilarity,
) -> Result<f64> {
    if features.nrows() != psych.n() {
        return Err(Error::arg(format!(
            "{} feature rows for {} stimuli",
            features.nrows(),
            psych.n()
        )));
    }
    spearman_upper(&target_similarity_matrix(features, sim)?, psych)
}

/// A target model's representation: one row of finite features per
/// stimulus, keyed by catalog id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub stimulus_ids: Vec<String>,
    pub values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(stimulus_ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if stimulus_ids.len() != values.nrows() {
            return Err(Error::arg("one id per feature row is required"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("feature entries must be finite"));
        }
        Ok(FeatureMatrix { stimulus_ids, values })
    }

    /// Reads CSV with header `stimulus_id,f0,f1,...`.
    pub fn from_csv_reader(reader: impl Read, path: &Path) -> Result<Self> {
        let mut csv = csv::Reader::from_reader(reader);
        let headers = csv.headers()?.clone();
        if headers.get(0) != Some("stimulus_id") || headers.len() < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "header must be stimulus_id,f0,f1,...".into(),
            });
        }
        let p = headers.len() - 1;
        let mut ids = Vec::new();
        let mut flat = Vec::new();
        for (k, record) in csv.records().enumerate() {
            let record = record?;
            let line = k + 2;
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            };
            if record.len() != p + 1 {
                return Err(parse_err(format!("expected {} fields, found {}", p + 1, record.len())));
            }
            ids.push(record[0].to_string());
            for field in record.iter().skip(1) {
                let v: f64 = field.trim().parse().map_err(|_| parse_err(format!("bad number {field:?}")))?;
                if !v.is_finite() {
                    return Err(parse_err(format!("non-finite value {field:?}")));
                }
                flat.push(v);
            }
        }
        let values = Array2::from_shape_vec((ids.len(), p), flat).expect("rows have p fields");
        FeatureMatrix::new(ids, values)
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, path)
    }

    /// Rows reordered to follow `catalog`; ids must match exactly.
    pub fn aligned(&self, catalog: &[String]) -> Result<Array2<f64>> {
        let index: HashMap<&str, usize> = self
            .stimulus_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        if index.len() != self.stimulus_ids.len() {
            return Err(Error::arg("duplicate stimulus id in features"));
        }
        if catalog.len() != self.stimulus_ids.len() {
            return Err(Error::arg(format!(
                "{} feature rows for a catalog of {}",
                self.stimulus_ids.len(),
                catalog.len()
            )));
        }
        let mut out = Array2::zeros((catalog.len(), self.values.ncols()));
        for (i, id) in catalog.iter().enumerate() {
            let &src = index
                .get(id.as_str())
                .ok_or_else(|| Error::arg(format!("catalog stimulus {id:?} has no feature row")))?;
            out.row_mut(i).assign(&self.values.row(src));
        }
        Ok(out)
    }
}

/// One metric evaluation, as emitted in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub config: serde_json::Value,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{OutcomeIndex, Trial};
    use ndarray::array;

    #[test]
    fn point_matrix_two_stimuli() {
        let p = EmbeddingPosterior::point(array![[0.0], [0.1]], 10.0).unwrap();
        let m = expected_similarity_matrix(&p, 3, &mut rng_from(0)).unwrap();
        assert_eq!(m.values()[[0, 0]], 1.0);
        assert!((m.values()[[0, 1]] - (-1.0f64).exp()).abs() < 1e-15);
        assert!(expected_similarity_matrix(&p, 0, &mut rng_from(0)).is_err());
    }

    #[test]
    fn rejects_asymmetric() {
        assert!(SimilarityMatrix::new(array![[1.0, 0.2], [0.3, 1.0]], SimilarityKind::TargetDot).is_err());
    }

    #[test]
    fn pearson_identity_and_reversal() {
        let a = SimilarityMatrix::new(
            array![[1.0, 0.2, 0.5], [0.2, 1.0, 0.9], [0.5, 0.9, 1.0]],
            SimilarityKind::ExpectedPsych,
        )
        .unwrap();
        assert_eq!(pearson_upper(&a, &a).unwrap(), 1.0);
        let b = SimilarityMatrix::new(a.values().mapv(|v| 3.0 - 2.0 * v), SimilarityKind::TargetDot).unwrap();
        assert!((pearson_upper(&a, &b).unwrap() + 1.0).abs() < 1e-12);
        let flat = SimilarityMatrix::new(Array2::ones((3, 3)), SimilarityKind::TargetDot).unwrap();
        assert!(matches!(pearson_upper(&a, &flat), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn triplet_expansion_ordering() {
        let trial = Trial::rank2(0, &[1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        let outcome = trial.encode(&[0, 1]).unwrap();
        let t = expand_triplets(&Observation::new(trial, outcome)).unwrap();
        assert_eq!(t.len(), 13);
        let has = |a: usize, b: usize| t.iter().any(|x| x.closer == StimulusId(a) && x.farther == StimulusId(b));
        assert!(has(1, 2));
        assert!(has(2, 3));
        assert!(!has(3, 4));
        assert!(!has(2, 1));
        let single = Trial::new(StimulusId(0), vec![StimulusId(1), StimulusId(2)], 1).unwrap();
        assert_eq!(expand_triplets(&Observation::new(single, OutcomeIndex(1))).unwrap().len(), 1);
    }

    #[test]
    fn identical_rows_score_zero() {
        let features = Array2::<f64>::ones((4, 3));
        let t = vec![Triplet {
            query: StimulusId(0),
            closer: StimulusId(1),
            farther: StimulusId(2),
            weight: 1.0,
        }];
        for d in [Distance::L1, Distance::L2, Distance::Cosine] {
            assert_eq!(triplet_accuracy(features.view(), &t, d).unwrap(), 0.0);
        }
        let bad = vec![Triplet {
            farther: StimulusId(9),
            ..t[0]
        }];
        assert!(triplet_accuracy(features.view(), &bad, Distance::L2).is_err());
    }

    #[test]
    fn feature_csv_alignment() {
        let text = "stimulus_id,f0,f1\nb,1.5,2\na,0,-1\n";
        let fm = FeatureMatrix::from_csv_reader(text.as_bytes(), Path::new("f.csv")).unwrap();
        let catalog = vec!["a".to_string(), "b".to_string()];
        assert_eq!(fm.aligned(&catalog).unwrap(), array![[0.0, -1.0], [1.5, 2.0]]);
        assert!(fm.aligned(&["a".to_string(), "c".to_string()]).is_err());
        let bad = "stimulus_id,f0\na,1\nb,x\n";
        match FeatureMatrix::from_csv_reader(bad.as_bytes(), Path::new("f.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
