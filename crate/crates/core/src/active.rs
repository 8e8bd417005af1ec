//! Trial selection by expected information gain.
//!
//! Scoring every possible trial is out of the question, so candidates are
//! assembled with two sampling heuristics: queries are drawn in proportion to
//! (a positive transform of) their posterior entropy, discounted by how often
//! they have already served as a query; references are drawn from the query's
//! nearest neighbors in proportion to expected similarity. Candidates are then
//! scored by the ensemble-mean mutual information between the embedding and
//! the trial outcome, and the best few per query are kept. Confirmation trials
//! mix two near and six far references to catch stimuli stuck in the wrong
//! neighborhood.

use std::collections::{BTreeMap, HashSet};

use ndarray::Array2;
use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::Ensemble;
use crate::model::{log_probabilities_from_logits, reference_logits, EmbeddingPosterior, StimulusId, Trial};
use crate::seed::{derive_seed, rng_from, stable_hash};

pub const TRIAL_REFERENCES: usize = 8;
pub const TRIAL_SELECT: usize = 2;
/// Joint posterior draws per stimulus pair for expected similarity.
pub const SIMILARITY_MC_SAMPLES: usize = 16;
/// References drawn from inside the neighborhood in a confirmation trial.
pub const CONFIRMATION_NEAR: usize = 2;

/// How many times each stimulus has served as a query (missing means 0).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryUsageCounter {
    counts: BTreeMap<StimulusId, u64>,
}

impl QueryUsageCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, stimulus: StimulusId) -> u64 {
        self.counts.get(&stimulus).copied().unwrap_or(0)
    }

    pub fn increment(&mut self, stimulus: StimulusId, by: u64) {
        *self.counts.entry(stimulus).or_insert(0) += by;
    }

    pub fn record(&mut self, trials: &[Trial]) {
        for t in trials {
            self.increment(t.query(), 1);
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// Size of the nearest-neighbor pool references are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Neighborhood {
    Count(usize),
    /// Fraction of the catalog, floored at 8 stimuli.
    Fraction(f64),
}

impl Default for Neighborhood {
    fn default() -> Self {
        Neighborhood::Fraction(0.01)
    }
}

impl Neighborhood {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            Neighborhood::Count(k) => k,
            Neighborhood::Fraction(f) => ((f * n as f64).ceil() as usize).max(TRIAL_REFERENCES),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub n_queries: usize,
    pub candidates_per_query: usize,
    pub keep_per_query: usize,
    pub neighborhood: Neighborhood,
    pub n_confirmation: usize,
    pub ig_mc_samples: usize,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            n_queries: 828,
            candidates_per_query: 10_000,
            keep_per_query: 3,
            neighborhood: Neighborhood::default(),
            n_confirmation: 828,
            ig_mc_samples: 64,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.keep_per_query > self.candidates_per_query {
            return Err(Error::arg("keep_per_query exceeds candidates_per_query"));
        }
        if self.ig_mc_samples < 2 {
            return Err(Error::arg("information gain needs at least 2 posterior samples"));
        }
        let k = self.neighborhood.resolve(n);
        if k < TRIAL_REFERENCES {
            return Err(Error::arg(format!("neighborhood {k} smaller than {TRIAL_REFERENCES}")));
        }
        if n <= k {
            return Err(Error::arg(format!("catalog of {n} stimuli must exceed neighborhood {k}")));
        }
        if self.n_queries > n {
            return Err(Error::arg(format!("cannot draw {} distinct queries from {n}", self.n_queries)));
        }
        let far = TRIAL_REFERENCES - CONFIRMATION_NEAR;
        if self.n_confirmation > 0 && n <= k + far {
            return Err(Error::arg(format!(
                "confirmation trials need more than {} stimuli for neighborhood {k}",
                k + far
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrial {
    pub trial: Trial,
    pub ig: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialOrigin {
    Ig,
    Confirmation,
    Random,
}

/// One line of a selected-trials file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedTrial {
    #[serde(flatten)]
    pub trial: Trial,
    pub origin: TrialOrigin,
    pub iteration: u32,
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Outcome distributions of one trial under several sampled embeddings.
/// `rows` gives the query row followed by the reference rows.
fn outcome_distributions<'a>(
    zs: impl Iterator<Item = &'a Array2<f64>>,
    rows: &[usize],
    n_select: usize,
    beta: f64,
    mut f: impl FnMut(&[f64]),
) {
    let mut buf = Vec::new();
    for z in zs {
        let (logits, _, r) = reference_logits(z.view(), rows[0], rows[1..].iter().copied(), beta);
        log_probabilities_from_logits(&logits[..r], n_select, &mut buf);
        buf.iter_mut().for_each(|v| *v = v.exp());
        f(&buf);
    }
}

/// `H(mean_s p_s) - mean_s H(p_s)` over the given samples, clamped at 0.
fn mutual_information<'a>(zs: &'a [Array2<f64>], rows: &[usize], n_select: usize, k: usize, beta: f64) -> f64 {
    let mut mean = vec![0.0; k];
    let mut mean_entropy = 0.0;
    outcome_distributions(zs.iter(), rows, n_select, beta, |p| {
        mean.iter_mut().zip(p).for_each(|(m, v)| *m += v);
        mean_entropy += entropy(p);
    });
    let s = zs.len() as f64;
    mean.iter_mut().for_each(|m| *m /= s);
    (entropy(&mean) - mean_entropy / s).max(0.0)
}

fn trial_rows(trial: &Trial) -> Vec<usize> {
    trial.stimuli().map(StimulusId::index).collect()
}

/// Expected information gain of `trial` under one posterior, in nats, from
/// `samples` joint draws of the stimuli the trial shows.
pub fn expected_information_gain<R: Rng + ?Sized>(
    trial: &Trial,
    posterior: &EmbeddingPosterior,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if samples < 2 {
        return Err(Error::arg("information gain needs at least 2 samples"));
    }
    if trial.max_index() >= posterior.n() {
        return Err(Error::arg("trial references a stimulus outside the posterior"));
    }
    let rows = trial_rows(trial);
    let zs: Vec<Array2<f64>> = (0..samples).map(|_| posterior.sample_rows(&rows, rng)).collect();
    let local: Vec<usize> = (0..rows.len()).collect();
    Ok(mutual_information(&zs, &local, trial.n_select(), trial.n_outcomes(), posterior.beta()))
}

/// Mean of the members' expected information gains.
pub fn ensemble_information_gain<R: Rng + ?Sized>(
    trial: &Trial,
    ensemble: &Ensemble,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut total = 0.0;
    for member in ensemble.members() {
        total += expected_information_gain(trial, member, samples, rng)?;
    }
    Ok(total / ensemble.members().len() as f64)
}

/// Differential entropy of one stimulus' Gaussian: `1/2 sum log(2 pi e s2)`.
pub fn stimulus_entropy(posterior: &EmbeddingPosterior, stimulus: StimulusId) -> Result<f64> {
    if stimulus.index() >= posterior.n() {
        return Err(Error::arg(format!("stimulus {stimulus} outside the posterior")));
    }
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    Ok(posterior
        .sigma2()
        .row(stimulus.index())
        .iter()
        .map(|s2| 0.5 * (two_pi_e * s2).ln())
        .sum())
}

/// Ensemble-mean entropy per stimulus divided by `d`, i.e. the log of the
/// positive weight `exp(H/d)` used for query sampling.
fn log_entropy_weights(ensemble: &Ensemble) -> Vec<f64> {
    let d = ensemble.d() as f64;
    (0..ensemble.n())
        .map(|i| {
            let h: f64 = ensemble
                .members()
                .iter()
                .map(|m| stimulus_entropy(m, StimulusId(i)).expect("index in range"))
                .sum::<f64>()
                / ensemble.members().len() as f64;
            h / d
        })
        .collect()
}

/// Sequential draws without replacement with probability proportional to
/// `exp(log_weights)`; when every remaining weight is zero the draw is
/// uniform over what is left.
fn weighted_without_replacement<R: Rng + ?Sized>(log_weights: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let max = log_weights
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = log_weights
        .iter()
        .map(|&lw| if max.is_finite() { (lw - max).exp() } else { 0.0 })
        .collect();
    let mut alive = vec![true; weights.len()];
    let mut picked = Vec::with_capacity(count);
    for _ in 0..count.min(weights.len()) {
        let total: f64 = weights.iter().zip(&alive).filter(|(_, a)| **a).map(|(w, _)| w).sum();
        let choice = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut last = None;
            let mut found = None;
            for (i, w) in weights.iter().enumerate() {
                if !alive[i] || *w == 0.0 {
                    continue;
                }
                last = Some(i);
                if u < *w {
                    found = Some(i);
                    break;
                }
                u -= w;
            }
            found.or(last).expect("positive total has a candidate")
        } else {
            let left: Vec<usize> = (0..weights.len()).filter(|&i| alive[i]).collect();
            left[rng.random_range(0..left.len())]
        };
        alive[choice] = false;
        weights[choice] = 0.0;
        picked.push(choice);
    }
    picked
}

/// Queries drawn without replacement with probability proportional to
/// `exp(H/d) / (c_q + 1)`.
pub fn sample_queries<R: Rng + ?Sized>(
    ensemble: &Ensemble,
    counter: &QueryUsageCounter,
    n_queries: usize,
    rng: &mut R,
) -> Result<Vec<StimulusId>> {
    if n_queries > ensemble.n() {
        return Err(Error::arg(format!(
            "cannot draw {n_queries} distinct queries from {} stimuli",
            ensemble.n()
        )));
    }
    let log_w: Vec<f64> = log_entropy_weights(ensemble)
        .into_iter()
        .enumerate()
        .map(|(i, lw)| lw - ((counter.get(StimulusId(i)) + 1) as f64).ln())
        .collect();
    Ok(weighted_without_replacement(&log_w, n_queries, rng)
        .into_iter()
        .map(StimulusId)
        .collect())
}

/// Joint posterior draws shared by every expected-similarity lookup of one
/// selection round.
struct SimilarityField {
    samples: Vec<Vec<Array2<f64>>>,
    beta: f64,
}

impl SimilarityField {
    fn new(ensemble: &Ensemble, seed: u64) -> Self {
        let samples = ensemble
            .members()
            .iter()
            .enumerate()
            .map(|(j, m)| {
                let mut rng = rng_from(derive_seed(seed, &[j as u64]));
                (0..SIMILARITY_MC_SAMPLES).map(|_| m.sample(&mut rng)).collect()
            })
            .collect();
        SimilarityField {
            samples,
            beta: ensemble.beta(),
        }
    }

    /// Ensemble-average expected similarity of `query` to every stimulus.
    fn row(&self, query: usize) -> Vec<f64> {
        let n = self.samples[0][0].nrows();
        let mut row = vec![0.0; n];
        let mut count = 0.0;
        for member in &self.samples {
            for z in member {
                let zq = z.row(query);
                for (r, acc) in row.iter_mut().enumerate() {
                    let zr = z.row(r);
                    let d: f64 = zq.iter().zip(zr.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    *acc += (-self.beta * d).exp();
                }
                count += 1.0;
            }
        }
        row.iter_mut().for_each(|v| *v /= count);
        row
    }
}

/// The `size` stimuli most similar to `query` (excluding it), most similar
/// first; ties go to the lower index.
fn nearest(row: &[f64], query: usize, size: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).filter(|&i| i != query).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order.truncate(size);
    order
}

fn draw_references<R: Rng + ?Sized>(row: &[f64], pool: &[usize], rng: &mut R) -> Vec<StimulusId> {
    let log_w: Vec<f64> = pool.iter().map(|&i| row[i].ln()).collect();
    weighted_without_replacement(&log_w, TRIAL_REFERENCES, rng)
        .into_iter()
        .map(|k| StimulusId(pool[k]))
        .collect()
}

/// Eight references for `query`, drawn without replacement from its
/// `neighborhood` nearest stimuli in proportion to expected similarity.
pub fn sample_references<R: Rng + ?Sized>(
    ensemble: &Ensemble,
    query: StimulusId,
    neighborhood: usize,
    rng: &mut R,
) -> Result<Vec<StimulusId>> {
    let n = ensemble.n();
    if query.index() >= n {
        return Err(Error::arg(format!("query {query} outside the catalog")));
    }
    if neighborhood < TRIAL_REFERENCES || n <= neighborhood {
        return Err(Error::arg(format!(
            "neighborhood {neighborhood} must be >= {TRIAL_REFERENCES} and < {n}"
        )));
    }
    let field = SimilarityField::new(ensemble, rng.random());
    let row = field.row(query.index());
    let pool = nearest(&row, query.index(), neighborhood);
    Ok(draw_references(&row, &pool, rng))
}

fn trial_hash(trial: &Trial) -> u64 {
    stable_hash(
        std::iter::once(trial.query().index() as u64)
            .chain(trial.references().iter().map(|r| r.index() as u64))
            .chain(std::iter::once(trial.n_select() as u64)),
    )
}

/// Selects `keep_per_query` trials for each of `n_queries` sampled queries.
///
/// Each query gets up to `candidates_per_query` distinct candidates (distinct
/// as reference sets); all candidates are scored against the same posterior
/// draws, and ties in information gain go to the lower trial hash. The usage
/// counter is updated once, after selection.
pub fn select_trials(
    ensemble: &Ensemble,
    counter: &mut QueryUsageCounter,
    config: &SelectionConfig,
) -> Result<Vec<CandidateTrial>> {
    let n = ensemble.n();
    config.validate(n)?;
    let neighborhood = config.neighborhood.resolve(n);
    let mut rng = rng_from(derive_seed(config.seed, &[0x9e]));
    let queries = sample_queries(ensemble, counter, config.n_queries, &mut rng)?;
    let field = SimilarityField::new(ensemble, derive_seed(config.seed, &[0x51]));
    let ig_samples: Vec<Vec<Array2<f64>>> = ensemble
        .members()
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let mut rng = rng_from(derive_seed(config.seed, &[0x16, j as u64]));
            (0..config.ig_mc_samples).map(|_| m.sample(&mut rng)).collect()
        })
        .collect();
    let beta = ensemble.beta();

    let per_query: Vec<Vec<CandidateTrial>> = queries
        .par_iter()
        .map(|&q| {
            let mut rng = rng_from(derive_seed(config.seed, &[0xca, q.index() as u64]));
            let row = field.row(q.index());
            let pool = nearest(&row, q.index(), neighborhood);
            let mut seen = HashSet::new();
            let mut candidates = Vec::with_capacity(config.candidates_per_query);
            let max_attempts = 20 * config.candidates_per_query;
            let mut attempts = 0;
            while candidates.len() < config.candidates_per_query && attempts < max_attempts {
                attempts += 1;
                let refs = draw_references(&row, &pool, &mut rng);
                let trial = Trial::new(q, refs, TRIAL_SELECT).expect("distinct references");
                if seen.insert(trial.canonical_key()) {
                    candidates.push(trial);
                }
            }
            let mut scored: Vec<(CandidateTrial, u64)> = candidates
                .into_iter()
                .map(|trial| {
                    let rows = trial_rows(&trial);
                    let k = trial.n_outcomes();
                    let ig = ig_samples
                        .iter()
                        .map(|zs| mutual_information(zs, &rows, trial.n_select(), k, beta))
                        .sum::<f64>()
                        / ig_samples.len() as f64;
                    let h = trial_hash(&trial);
                    (CandidateTrial { trial, ig }, h)
                })
                .collect();
            scored.sort_by(|(a, ha), (b, hb)| b.ig.total_cmp(&a.ig).then(ha.cmp(hb)));
            scored.truncate(config.keep_per_query);
            scored.into_iter().map(|(c, _)| c).collect()
        })
        .collect();

    let selected: Vec<CandidateTrial> = per_query.into_iter().flatten().collect();
    for c in &selected {
        counter.increment(c.trial.query(), 1);
    }
    Ok(selected)
}

/// Confirmation trials: queries drawn in proportion to `exp(H/d)` (no usage
/// discount), each with two references drawn uniformly from the query's
/// neighborhood and six uniformly from outside it, in shuffled order.
pub fn make_confirmation_trials<R: Rng + ?Sized>(
    ensemble: &Ensemble,
    counter: &mut QueryUsageCounter,
    config: &SelectionConfig,
    rng: &mut R,
) -> Result<Vec<Trial>> {
    let n = ensemble.n();
    let neighborhood = config.neighborhood.resolve(n);
    let far = TRIAL_REFERENCES - CONFIRMATION_NEAR;
    if neighborhood < CONFIRMATION_NEAR || n <= neighborhood + far {
        return Err(Error::arg(format!(
            "catalog of {n} stimuli too small for neighborhood {neighborhood} plus {far} outside references"
        )));
    }
    let log_w = log_entropy_weights(ensemble);
    let mut queries = Vec::with_capacity(config.n_confirmation);
    while queries.len() < config.n_confirmation {
        let take = (config.n_confirmation - queries.len()).min(n);
        queries.extend(weighted_without_replacement(&log_w, take, rng));
    }
    let field = SimilarityField::new(ensemble, rng.random());
    let mut trials = Vec::with_capacity(queries.len());
    for q in queries {
        let row = field.row(q);
        let near = nearest(&row, q, neighborhood);
        let near_set: HashSet<usize> = near.iter().copied().collect();
        let outside: Vec<usize> = (0..n).filter(|i| *i != q && !near_set.contains(i)).collect();
        let mut refs: Vec<StimulusId> = sample_indices(rng, near.len(), CONFIRMATION_NEAR)
            .into_iter()
            .map(|k| StimulusId(near[k]))
            .chain(sample_indices(rng, outside.len(), far).into_iter().map(|k| StimulusId(outside[k])))
            .collect();
        refs.shuffle(rng);
        trials.push(Trial::new(StimulusId(q), refs, TRIAL_SELECT)?);
    }
    counter.record(&trials);
    Ok(trials)
}

/// Uniformly random trials: a uniform query and `r` distinct uniform
/// references. Used for cold starts and coarse-grained evaluation sets.
pub fn random_trials<R: Rng + ?Sized>(n: usize, count: usize, r: usize, c: usize, rng: &mut R) -> Result<Vec<Trial>> {
    if n < r + 1 {
        return Err(Error::arg(format!("need at least {} stimuli for {r} references", r + 1)));
    }
    (0..count)
        .map(|_| {
            let q = rng.random_range(0..n);
            let refs = sample_indices(rng, n - 1, r)
                .into_iter()
                .map(|k| StimulusId(if k >= q { k + 1 } else { k }))
                .collect();
            Trial::new(StimulusId(q), refs, c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn point_ensemble(z: Array2<f64>) -> Ensemble {
        Ensemble::replicate(EmbeddingPosterior::point(z, 10.0).unwrap(), 0)
    }

    #[test]
    fn entropy_closed_form() {
        let p = EmbeddingPosterior::new(array![[0.0, 0.0]], array![[1.0, 1.0]], 1.0, 10.0).unwrap();
        let h = stimulus_entropy(&p, StimulusId(0)).unwrap();
        assert!((h - (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()).abs() < 1e-12);
        let unit = 1.0 / (2.0 * std::f64::consts::PI * std::f64::consts::E);
        let p = EmbeddingPosterior::new(array![[0.0]], array![[unit]], 1.0, 10.0).unwrap();
        assert!(stimulus_entropy(&p, StimulusId(0)).unwrap().abs() < 1e-12);
        let q = EmbeddingPosterior::new(array![[0.0, 0.0]], array![[1.0, 0.5]], 1.0, 10.0).unwrap();
        assert!(stimulus_entropy(&q, StimulusId(0)).unwrap() < h);
    }

    #[test]
    fn point_posterior_has_no_information_gain() {
        let z = array![[0.0, 0.0], [0.1, 0.0], [0.0, 0.2], [0.3, 0.1], [0.2, 0.2]];
        let p = EmbeddingPosterior::point(z, 10.0).unwrap();
        let t = Trial::rank2(0, &[1, 2, 3, 4]).unwrap();
        let ig = expected_information_gain(&t, &p, 16, &mut rng_from(1)).unwrap();
        assert!(ig.abs() < 1e-9);
        assert!(expected_information_gain(&t, &p, 1, &mut rng_from(1)).is_err());
    }

    #[test]
    fn neighborhood_resolution() {
        assert_eq!(Neighborhood::default().resolve(50_000), 500);
        assert_eq!(Neighborhood::default().resolve(30), 8);
        assert_eq!(Neighborhood::Count(12).resolve(30), 12);
        let json = serde_json::to_string(&Neighborhood::Count(500)).unwrap();
        assert_eq!(serde_json::from_str::<Neighborhood>(&json).unwrap(), Neighborhood::Count(500));
        assert_eq!(
            serde_json::from_str::<Neighborhood>("0.05").unwrap(),
            Neighborhood::Fraction(0.05)
        );
    }

    #[test]
    fn exhausted_neighborhood_takes_everyone() {
        let z = Array2::from_shape_fn((9, 2), |(i, k)| (i * 7 + k * 3) as f64 * 0.01);
        let e = point_ensemble(z);
        let mut refs = sample_references(&e, StimulusId(4), 8, &mut rng_from(2)).unwrap();
        refs.sort();
        let expected: Vec<StimulusId> = (0..9).filter(|&i| i != 4).map(StimulusId).collect();
        assert_eq!(refs, expected);
        assert!(sample_references(&e, StimulusId(4), 9, &mut rng_from(2)).is_err());
    }

    #[test]
    fn random_trials_are_valid() {
        let trials = random_trials(12, 200, 8, 2, &mut rng_from(4)).unwrap();
        for t in &trials {
            assert!(t.max_index() < 12);
            assert_eq!(t.n_references(), 8);
        }
        assert!(random_trials(8, 1, 8, 2, &mut rng_from(4)).is_err());
    }

    #[test]
    fn selected_trial_line_format() {
        let line = SelectedTrial {
            trial: Trial::rank2(3, &[0, 1, 2, 4, 5, 6, 7, 8]).unwrap(),
            origin: TrialOrigin::Confirmation,
            iteration: 2,
        };
        let json = serde_json::to_value(&line).unwrap();
        assert_eq!(json["query"], 3);
        assert_eq!(json["references"].as_array().unwrap().len(), 8);
        assert_eq!(json["n_select"], 2);
        assert_eq!(json["origin"], "confirmation");
        assert_eq!(json["iteration"], 2);
    }
}
