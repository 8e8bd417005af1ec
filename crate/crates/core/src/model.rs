//! Trials, outcomes, observations and the ranked-choice likelihood.
//!
//! A trial shows a query and an ordered tuple of `r` references; the judge
//! picks `c` of them in order. Outcomes are numbered by enumerating the
//! ordered position tuples lexicographically, so outcome 0 of an 8-rank-2
//! trial is `(0, 1)`, outcome 1 is `(0, 2)`, and so on.
//!
//! Probabilities follow a chained Luce ratio rule over the exponential
//! similarity kernel `exp(-beta * ||z_i - z_j||)`. Everything is computed
//! from log-strengths with a log-sum-exp reduction, so large distances never
//! underflow to a zero probability.

use std::fmt;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel steepness used throughout unless configured otherwise.
pub const DEFAULT_BETA: f64 = 10.0;

/// Largest supported reference count.
pub const MAX_REFERENCES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StimulusId(pub usize);

impl StimulusId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for StimulusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for StimulusId {
    fn from(value: usize) -> Self {
        StimulusId(value)
    }
}

/// Index into the lexicographic outcome enumeration of a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutcomeIndex(pub usize);

/// A query plus an ordered tuple of distinct references.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "TrialRepr", into = "TrialRepr")]
pub struct Trial {
    query: StimulusId,
    references: Vec<StimulusId>,
    n_select: usize,
}

#[derive(Serialize, Deserialize)]
struct TrialRepr {
    query: StimulusId,
    references: Vec<StimulusId>,
    n_select: usize,
}

impl TryFrom<TrialRepr> for Trial {
    type Error = Error;

    fn try_from(repr: TrialRepr) -> Result<Self> {
        Trial::new(repr.query, repr.references, repr.n_select)
    }
}

impl From<Trial> for TrialRepr {
    fn from(trial: Trial) -> Self {
        TrialRepr {
            query: trial.query,
            references: trial.references,
            n_select: trial.n_select,
        }
    }
}

impl Trial {
    pub fn new(query: StimulusId, references: Vec<StimulusId>, n_select: usize) -> Result<Self> {
        let r = references.len();
        check_format(r, n_select)?;
        if references.contains(&query) {
            return Err(Error::arg(format!("query {query} appears among its references")));
        }
        for (i, a) in references.iter().enumerate() {
            if references[i + 1..].contains(a) {
                return Err(Error::arg(format!("reference {a} repeated")));
            }
        }
        Ok(Trial {
            query,
            references,
            n_select,
        })
    }

    /// An 8-rank-2 trial (or any `r`-rank-2 trial) from raw indices.
    pub fn rank2(query: usize, references: &[usize]) -> Result<Self> {
        Trial::new(
            StimulusId(query),
            references.iter().copied().map(StimulusId).collect(),
            2,
        )
    }

    pub fn query(&self) -> StimulusId {
        self.query
    }

    pub fn references(&self) -> &[StimulusId] {
        &self.references
    }

    pub fn n_references(&self) -> usize {
        self.references.len()
    }

    pub fn n_select(&self) -> usize {
        self.n_select
    }

    pub fn n_outcomes(&self) -> usize {
        n_permutations(self.references.len(), self.n_select)
    }

    /// Largest stimulus index the trial touches.
    pub fn max_index(&self) -> usize {
        self.references
            .iter()
            .map(|r| r.0)
            .chain(std::iter::once(self.query.0))
            .max()
            .unwrap_or(0)
    }

    pub fn stimuli(&self) -> impl Iterator<Item = StimulusId> + '_ {
        std::iter::once(self.query).chain(self.references.iter().copied())
    }

    /// Ordered reference positions selected by `outcome`.
    pub fn decode(&self, outcome: OutcomeIndex) -> Result<Vec<usize>> {
        decode_outcome(self.references.len(), self.n_select, outcome)
    }

    pub fn encode(&self, positions: &[usize]) -> Result<OutcomeIndex> {
        encode_outcome(self.references.len(), self.n_select, positions)
    }

    /// Order-insensitive identity of the trial, used for de-duplication.
    pub fn canonical_key(&self) -> (StimulusId, Vec<StimulusId>, usize) {
        let mut refs = self.references.clone();
        refs.sort_unstable();
        (self.query, refs, self.n_select)
    }

    fn check_bounds(&self, n: usize) -> Result<()> {
        if self.max_index() >= n {
            return Err(Error::arg(format!(
                "trial references stimulus {} but the embedding has {n} stimuli",
                self.max_index()
            )));
        }
        Ok(())
    }
}

/// A judged trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub trial: Trial,
    pub outcome: OutcomeIndex,
    pub weight: f64,
    pub session_id: String,
    /// Position within the session, when the judgment came from one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<usize>,
    pub worker_hash: String,
    pub duration_s: f64,
    #[serde(default)]
    pub is_catch: bool,
}

impl Observation {
    /// A unit-weight observation with placeholder session metadata.
    pub fn new(trial: Trial, outcome: OutcomeIndex) -> Self {
        Observation {
            trial,
            outcome,
            weight: 1.0,
            session_id: String::new(),
            slot: None,
            worker_hash: String::new(),
            duration_s: 0.0,
            is_catch: false,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.outcome.0 >= self.trial.n_outcomes() {
            return Err(Error::arg(format!(
                "outcome {} out of range for a trial with {} outcomes",
                self.outcome.0,
                self.trial.n_outcomes()
            )));
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(Error::arg(format!("weight {} outside [0, 1]", self.weight)));
        }
        if !(self.duration_s >= 0.0) {
            return Err(Error::arg(format!("negative duration {}", self.duration_s)));
        }
        Ok(())
    }
}

/// Diagonal-Gaussian posterior over stimulus locations plus kernel and prior
/// parameters. Coordinates are identifiable only up to rotation and
/// translation.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPosterior {
    pub(crate) mu: Array2<f64>,
    pub(crate) sigma2: Array2<f64>,
    pub(crate) prior_sigma: f64,
    pub(crate) beta: f64,
}

impl EmbeddingPosterior {
    /// Variances may be zero, which gives a point-mass posterior (used for
    /// ground-truth embeddings); they may not be negative.
    pub fn new(mu: Array2<f64>, sigma2: Array2<f64>, prior_sigma: f64, beta: f64) -> Result<Self> {
        if mu.dim() != sigma2.dim() {
            return Err(Error::arg(format!(
                "mean shape {:?} differs from variance shape {:?}",
                mu.dim(),
                sigma2.dim()
            )));
        }
        if mu.ncols() == 0 {
            return Err(Error::arg("dimensionality must be positive"));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("non-finite posterior mean"));
        }
        if sigma2.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::arg("posterior variances must be finite and non-negative"));
        }
        if !(prior_sigma > 0.0) || !(beta > 0.0) {
            return Err(Error::arg("prior scale and beta must be positive"));
        }
        Ok(EmbeddingPosterior {
            mu,
            sigma2,
            prior_sigma,
            beta,
        })
    }

    /// Point-mass posterior at `z`. The prior scale is set to the RMS
    /// coordinate, or 1 for an all-zero embedding.
    pub fn point(z: Array2<f64>, beta: f64) -> Result<Self> {
        let rms = (z.iter().map(|v| v * v).sum::<f64>() / z.len().max(1) as f64).sqrt();
        let prior_sigma = if rms > 0.0 { rms } else { 1.0 };
        let sigma2 = Array2::zeros(z.dim());
        EmbeddingPosterior::new(z, sigma2, prior_sigma, beta)
    }

    pub fn n(&self) -> usize {
        self.mu.nrows()
    }

    pub fn d(&self) -> usize {
        self.mu.ncols()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn prior_sigma(&self) -> f64 {
        self.prior_sigma
    }

    pub fn mu(&self) -> ArrayView2<'_, f64> {
        self.mu.view()
    }

    pub fn sigma2(&self) -> ArrayView2<'_, f64> {
        self.sigma2.view()
    }

    /// One joint draw `mu + sqrt(sigma2) * eps` of all stimulus locations.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Array2<f64> {
        let mut z = self.mu.clone();
        for (zi, s2) in z.iter_mut().zip(self.sigma2.iter()) {
            let eps: f64 = rng.sample(StandardNormal);
            *zi += s2.sqrt() * eps;
        }
        z
    }

    /// Draws only the listed rows, in order, as a `rows.len() x d` matrix.
    pub(crate) fn sample_rows<R: Rng + ?Sized>(&self, rows: &[usize], rng: &mut R) -> Array2<f64> {
        let d = self.d();
        let mut z = Array2::zeros((rows.len(), d));
        for (out_row, &i) in rows.iter().enumerate() {
            for k in 0..d {
                let eps: f64 = rng.sample(StandardNormal);
                z[[out_row, k]] = self.mu[[i, k]] + self.sigma2[[i, k]].sqrt() * eps;
            }
        }
        z
    }
}

fn check_format(r: usize, c: usize) -> Result<()> {
    if !(2..=MAX_REFERENCES).contains(&r) {
        return Err(Error::arg(format!(
            "reference count {r} outside [2, {MAX_REFERENCES}]"
        )));
    }
    if c < 1 || c >= r {
        return Err(Error::arg(format!("choice count {c} must satisfy 1 <= c < {r}")));
    }
    Ok(())
}

/// `r! / (r - c)!`
pub fn n_permutations(r: usize, c: usize) -> usize {
    ((r - c + 1)..=r).product()
}

/// All ordered `c`-tuples of distinct positions in `[0, r)`, in lexicographic
/// order. The list index of a tuple is its [`OutcomeIndex`].
pub fn enumerate_outcomes(r: usize, c: usize) -> Result<Vec<Vec<usize>>> {
    check_format(r, c)?;
    (0..n_permutations(r, c))
        .map(|k| decode_outcome(r, c, OutcomeIndex(k)))
        .collect()
}

pub fn decode_outcome(r: usize, c: usize, outcome: OutcomeIndex) -> Result<Vec<usize>> {
    check_format(r, c)?;
    let k = n_permutations(r, c);
    if outcome.0 >= k {
        return Err(Error::arg(format!("outcome {} out of range [0, {k})", outcome.0)));
    }
    let mut available: Vec<usize> = (0..r).collect();
    let mut rest = outcome.0;
    let mut tuple = Vec::with_capacity(c);
    for stage in 0..c {
        let block = n_permutations(r - stage - 1, c - stage - 1);
        let pick = rest / block;
        rest %= block;
        tuple.push(available.remove(pick));
    }
    Ok(tuple)
}

pub fn encode_outcome(r: usize, c: usize, positions: &[usize]) -> Result<OutcomeIndex> {
    check_format(r, c)?;
    if positions.len() != c {
        return Err(Error::arg(format!(
            "expected {c} ranked positions, got {}",
            positions.len()
        )));
    }
    let mut available: Vec<usize> = (0..r).collect();
    let mut index = 0;
    for (stage, pos) in positions.iter().enumerate() {
        let rank = available
            .iter()
            .position(|p| p == pos)
            .ok_or_else(|| Error::arg(format!("position {pos} invalid or repeated")))?;
        available.remove(rank);
        index += rank * n_permutations(r - stage - 1, c - stage - 1);
    }
    Ok(OutcomeIndex(index))
}

pub(crate) fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `exp(-beta * ||a - b||)`
pub fn similarity(a: &[f64], b: &[f64], beta: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::arg(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok((-beta * l2_distance(a, b)).exp())
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-strengths `-beta * ||z_q - z_r||` for every reference, written into
/// the first `r` slots of the returned arrays, alongside the distances.
/// Callers pass row indices so compact per-trial sample matrices work too.
pub(crate) fn reference_logits(
    z: ArrayView2<'_, f64>,
    query_row: usize,
    reference_rows: impl Iterator<Item = usize>,
    beta: f64,
) -> ([f64; MAX_REFERENCES], [f64; MAX_REFERENCES], usize) {
    let mut logits = [0.0; MAX_REFERENCES];
    let mut dists = [0.0; MAX_REFERENCES];
    let zq = z.row(query_row);
    let mut r = 0;
    for row in reference_rows {
        let zr = z.row(row);
        let d = zq
            .iter()
            .zip(zr.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        dists[r] = d;
        logits[r] = -beta * d;
        r += 1;
    }
    (logits, dists, r)
}

/// Log-probabilities of every outcome given per-reference log-strengths,
/// in lexicographic outcome order.
pub(crate) fn log_probabilities_from_logits(logits: &[f64], c: usize, out: &mut Vec<f64>) {
    fn visit(logits: &[f64], mask: u32, depth: usize, c: usize, acc: f64, out: &mut Vec<f64>) {
        let remaining = || (0..logits.len()).filter(move |&j| mask & (1 << j) != 0);
        let lse = log_sum_exp(remaining().map(|j| logits[j]));
        for j in remaining() {
            let value = acc + logits[j] - lse;
            if depth + 1 == c {
                out.push(value);
            } else {
                visit(logits, mask & !(1 << j), depth + 1, c, value, out);
            }
        }
    }
    out.clear();
    let full = (1u32 << logits.len()) - 1;
    visit(logits, full, 0, c, 0.0, out);
}

/// Log-probability of one ranked selection, accumulating its gradient with
/// respect to the log-strengths into `grad`.
pub(crate) fn outcome_log_prob_with_grad(logits: &[f64], chosen: &[usize], grad: &mut [f64]) -> f64 {
    let r = logits.len();
    let mut mask: u32 = (1 << r) - 1;
    let mut total = 0.0;
    for &a in chosen {
        let remaining = || (0..r).filter(move |&j| mask & (1 << j) != 0);
        let lse = log_sum_exp(remaining().map(|j| logits[j]));
        total += logits[a] - lse;
        for j in remaining() {
            grad[j] -= (logits[j] - lse).exp();
        }
        grad[a] += 1.0;
        mask &= !(1 << a);
    }
    total
}

/// Log-probability of one ranked selection.
pub(crate) fn outcome_log_prob(logits: &[f64], chosen: &[usize]) -> f64 {
    let r = logits.len();
    let mut mask: u32 = (1 << r) - 1;
    let mut total = 0.0;
    for &a in chosen {
        let lse = log_sum_exp((0..r).filter(|&j| mask & (1 << j) != 0).map(|j| logits[j]));
        total += logits[a] - lse;
        mask &= !(1 << a);
    }
    total
}

fn trial_logits(trial: &Trial, z: ArrayView2<'_, f64>, beta: f64) -> ([f64; MAX_REFERENCES], usize) {
    let (logits, _, r) = reference_logits(
        z,
        trial.query.0,
        trial.references.iter().map(|s| s.0),
        beta,
    );
    (logits, r)
}

/// Log-probabilities of every outcome of `trial` under point embedding `z`.
pub fn outcome_log_probabilities(trial: &Trial, z: ArrayView2<'_, f64>, beta: f64) -> Result<Vec<f64>> {
    trial.check_bounds(z.nrows())?;
    let (logits, r) = trial_logits(trial, z, beta);
    let mut out = Vec::with_capacity(trial.n_outcomes());
    log_probabilities_from_logits(&logits[..r], trial.n_select, &mut out);
    Ok(out)
}

/// Probability of every outcome of `trial` under point embedding `z`.
pub fn outcome_probabilities(trial: &Trial, z: ArrayView2<'_, f64>, beta: f64) -> Result<Vec<f64>> {
    let mut p = outcome_log_probabilities(trial, z, beta)?;
    p.iter_mut().for_each(|v| *v = v.exp());
    Ok(p)
}

/// `sum_i w_i log p(y_i | T_i, z)`.
pub fn weighted_log_likelihood(observations: &[Observation], z: ArrayView2<'_, f64>, beta: f64) -> Result<f64> {
    let mut total = 0.0;
    for obs in observations {
        obs.trial.check_bounds(z.nrows())?;
        let chosen = obs.trial.decode(obs.outcome)?;
        let (logits, r) = trial_logits(&obs.trial, z, beta);
        total += obs.weight * outcome_log_prob(&logits[..r], &chosen);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn enumerates_small_formats() {
        assert_eq!(enumerate_outcomes(2, 1).unwrap(), vec![vec![0], vec![1]]);
        assert_eq!(
            enumerate_outcomes(3, 2).unwrap(),
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![1, 0],
                vec![1, 2],
                vec![2, 0],
                vec![2, 1]
            ]
        );
        assert_eq!(enumerate_outcomes(8, 2).unwrap().len(), 56);
    }

    #[test]
    fn rejects_bad_formats() {
        assert!(enumerate_outcomes(1, 1).is_err());
        assert!(enumerate_outcomes(3, 3).is_err());
        assert!(enumerate_outcomes(9, 2).is_err());
        assert!(enumerate_outcomes(4, 0).is_err());
    }

    #[test]
    fn encode_inverts_decode() {
        for (r, c) in [(8, 2), (5, 3), (4, 1)] {
            for k in 0..n_permutations(r, c) {
                let tuple = decode_outcome(r, c, OutcomeIndex(k)).unwrap();
                assert_eq!(encode_outcome(r, c, &tuple).unwrap(), OutcomeIndex(k));
            }
        }
        assert!(encode_outcome(8, 2, &[3, 3]).is_err());
        assert!(encode_outcome(8, 2, &[8, 1]).is_err());
    }

    #[test]
    fn trial_invariants() {
        assert!(Trial::rank2(0, &[0, 1]).is_err());
        assert!(Trial::rank2(0, &[1, 1]).is_err());
        assert!(Trial::new(StimulusId(0), vec![StimulusId(1)], 1).is_err());
        let t = Trial::rank2(0, &[1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        assert_eq!(t.n_outcomes(), 56);
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<Trial>(&json).unwrap(), t);
        assert!(serde_json::from_str::<Trial>(r#"{"query":1,"references":[1,2],"n_select":1}"#).is_err());
    }

    #[test]
    fn similarity_values() {
        assert_eq!(similarity(&[0.3, 0.4], &[0.3, 0.4], 10.0).unwrap(), 1.0);
        let s = similarity(&[0.0], &[0.1], 10.0).unwrap();
        assert!((s - (-1.0f64).exp()).abs() < 1e-12);
        let s = similarity(&[0.0, 0.0], &[0.12, 0.16], 10.0).unwrap();
        assert!((s - (-2.0f64).exp()).abs() < 1e-12);
        assert!(similarity(&[0.0], &[0.0, 1.0], 10.0).is_err());
    }

    #[test]
    fn two_rank_one_on_a_line() {
        let z = array![[0.0], [0.1], [0.2]];
        let t = Trial::new(StimulusId(0), vec![StimulusId(1), StimulusId(2)], 1).unwrap();
        let p = outcome_probabilities(&t, z.view(), 10.0).unwrap();
        let e1 = (-1.0f64).exp();
        let e2 = (-2.0f64).exp();
        assert!((p[0] - e1 / (e1 + e2)).abs() < 1e-12);
        assert!((p[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
    }

    #[test]
    fn equidistant_references_are_uniform() {
        let mut z = Array2::zeros((9, 2));
        for k in 0..8 {
            let angle = k as f64 * std::f64::consts::TAU / 8.0;
            z[[k + 1, 0]] = 0.3 * angle.cos();
            z[[k + 1, 1]] = 0.3 * angle.sin();
        }
        let t = Trial::rank2(0, &[1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        let p = outcome_probabilities(&t, z.view(), 10.0).unwrap();
        assert_eq!(p.len(), 56);
        for v in p {
            assert!((v - 1.0 / 56.0).abs() < 1e-12);
        }
    }

    #[test]
    fn far_references_do_not_underflow() {
        let z = array![[0.0], [0.0], [500.0], [1000.0]];
        let t = Trial::rank2(0, &[1, 2, 3]).unwrap();
        let lp = outcome_log_probabilities(&t, z.view(), 10.0).unwrap();
        assert!(lp.iter().all(|v| v.is_finite()));
        let obs = Observation::new(t.clone(), t.encode(&[2, 1]).unwrap());
        let ll = weighted_log_likelihood(&[obs], z.view(), 10.0).unwrap();
        assert!(ll.is_finite() && ll < -1e4);
    }

    #[test]
    fn weighted_log_likelihood_scales() {
        let mut z = Array2::zeros((9, 1));
        for k in 1..9 {
            z[[k, 0]] = if k % 2 == 0 { 0.2 } else { -0.2 };
        }
        let t = Trial::rank2(0, &[1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        assert_eq!(weighted_log_likelihood(&[], z.view(), 10.0).unwrap(), 0.0);
        let obs = Observation::new(t, OutcomeIndex(17));
        let full = weighted_log_likelihood(std::slice::from_ref(&obs), z.view(), 10.0).unwrap();
        assert!((full - (1.0f64 / 56.0).ln()).abs() < 1e-12);
        assert!((full + 4.025_351_690_735_15).abs() < 1e-9);
        let half = weighted_log_likelihood(&[obs.with_weight(0.5)], z.view(), 10.0).unwrap();
        assert!((half + 2.012_675_845_367_575).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_trial_is_rejected() {
        let z = Array2::<f64>::zeros((3, 2));
        let t = Trial::rank2(0, &[1, 2, 5]).unwrap();
        assert!(outcome_probabilities(&t, z.view(), 10.0).is_err());
    }

    #[test]
    fn point_posterior_has_zero_variance() {
        let p = EmbeddingPosterior::point(array![[0.0, 1.0], [1.0, 0.0]], 10.0).unwrap();
        assert!(p.sigma2().iter().all(|v| *v == 0.0));
        assert!(EmbeddingPosterior::new(array![[0.0]], array![[-1.0]], 1.0, 10.0).is_err());
    }
}
