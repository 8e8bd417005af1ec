use rayon::prelude::*;

use super::fit::{fit_posterior_split, sample_holdout, split, FitConfig, FitOutcome};
use crate::error::{Error, Result};
use crate::model::{EmbeddingPosterior, Observation};
use crate::seed::derive_seed;

pub const ENSEMBLE_SIZE: usize = 3;

/// Minimum observation count for an ensemble fit.
pub const MIN_ENSEMBLE_OBSERVATIONS: usize = 20;

/// Losses closer than this are treated as equal when choosing a dimensionality.
pub const DIMENSION_TIE_TOLERANCE: f64 = 1e-4;

/// Three equally weighted posteriors, each with its own validation holdout.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<EmbeddingPosterior>,
    holdout_masks: Vec<Vec<usize>>,
    val_loss: Vec<f64>,
    warm_started: Vec<bool>,
    n_observations: usize,
    iteration: u32,
}

impl Ensemble {
    pub fn from_parts(
        members: Vec<EmbeddingPosterior>,
        holdout_masks: Vec<Vec<usize>>,
        val_loss: Vec<f64>,
        iteration: u32,
    ) -> Result<Self> {
        if members.len() != ENSEMBLE_SIZE || holdout_masks.len() != ENSEMBLE_SIZE || val_loss.len() != ENSEMBLE_SIZE {
            return Err(Error::arg(format!("an ensemble has exactly {ENSEMBLE_SIZE} members")));
        }
        let (n, d, beta) = (members[0].n(), members[0].d(), members[0].beta());
        if members.iter().any(|m| m.n() != n || m.d() != d || m.beta() != beta) {
            return Err(Error::arg("ensemble members must share n, d and beta"));
        }
        Ok(Ensemble {
            members,
            holdout_masks,
            val_loss,
            warm_started: vec![false; ENSEMBLE_SIZE],
            n_observations: 0,
            iteration,
        })
    }

    /// Three copies of one posterior. Handy for ground truth and tests.
    pub fn replicate(member: EmbeddingPosterior, iteration: u32) -> Self {
        Ensemble {
            members: vec![member; ENSEMBLE_SIZE],
            holdout_masks: vec![Vec::new(); ENSEMBLE_SIZE],
            val_loss: vec![0.0; ENSEMBLE_SIZE],
            warm_started: vec![false; ENSEMBLE_SIZE],
            n_observations: 0,
            iteration,
        }
    }

    /// Records how many observations (in dataset order) the fit saw.
    pub fn with_observation_count(mut self, n_observations: usize) -> Self {
        self.n_observations = n_observations;
        self
    }

    pub fn members(&self) -> &[EmbeddingPosterior] {
        &self.members
    }

    pub fn holdout_masks(&self) -> &[Vec<usize>] {
        &self.holdout_masks
    }

    pub fn val_loss(&self) -> &[f64] {
        &self.val_loss
    }

    pub fn mean_val_loss(&self) -> f64 {
        self.val_loss.iter().sum::<f64>() / self.val_loss.len() as f64
    }

    /// Which members resumed from the previous ensemble.
    pub fn warm_started(&self) -> &[bool] {
        &self.warm_started
    }

    /// Number of observations the fit saw; 0 when unknown.
    pub fn n_observations(&self) -> usize {
        self.n_observations
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn n(&self) -> usize {
        self.members[0].n()
    }

    pub fn d(&self) -> usize {
        self.members[0].d()
    }

    pub fn beta(&self) -> f64 {
        self.members[0].beta()
    }
}

/// Which member slots resume from the previous ensemble: the two with the
/// lowest validation loss (lower index wins ties). The worst is refit from
/// scratch.
pub fn warm_start_plan(previous_val_loss: &[f64]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..previous_val_loss.len()).collect();
    order.sort_by(|&a, &b| previous_val_loss[a].total_cmp(&previous_val_loss[b]).then(a.cmp(&b)));
    let mut plan = vec![false; previous_val_loss.len()];
    for &i in order.iter().take(previous_val_loss.len().saturating_sub(1)) {
        plan[i] = true;
    }
    plan
}

/// Fits a three-member ensemble at dimensionality `d`.
///
/// Each member withholds its own independently sampled holdout. Fresh
/// members keep the best of `config.restarts` initializations. When a
/// previous ensemble of the same shape is supplied, the two best members
/// resume from their previous parameters and the worst starts fresh. A
/// single failed member is refit from a fresh start (and, failing that,
/// replaced by a copy of the best surviving member); two or more failures
/// fail the ensemble.
pub fn fit_ensemble(
    observations: &[Observation],
    n: usize,
    d: usize,
    config: &FitConfig,
    previous: Option<&Ensemble>,
    iteration: u32,
) -> Result<Ensemble> {
    config.validate()?;
    if observations.len() < MIN_ENSEMBLE_OBSERVATIONS {
        return Err(Error::arg(format!(
            "ensemble fit needs at least {MIN_ENSEMBLE_OBSERVATIONS} observations, got {}",
            observations.len()
        )));
    }
    let previous = previous.filter(|p| p.d() == d && p.n() == n);
    let plan = match previous {
        Some(p) => warm_start_plan(p.val_loss()),
        None => vec![false; ENSEMBLE_SIZE],
    };

    let m = observations.len();
    let masks: Vec<Vec<usize>> = (0..ENSEMBLE_SIZE)
        .map(|j| {
            let seed = derive_seed(config.seed, &[0x4d, j as u64]);
            match previous {
                Some(p) if holdout_carries_over(p, m) => extend_holdout(&p.holdout_masks[j], p.n_observations, m, config, seed),
                _ => sample_holdout(m, config, seed),
            }
        })
        .collect();

    let fit_member = |j: usize, attempt: u64, warm: bool| -> Result<FitOutcome> {
        let (train, held) = split(observations, &masks[j]);
        if warm {
            let seed = derive_seed(config.seed, &[0x3e, j as u64, attempt]);
            return fit_posterior_split(&train, &held, n, d, config, previous.map(|p| &p.members[j]), seed);
        }
        let runs: Vec<Result<FitOutcome>> = (0..config.restarts as u64)
            .into_par_iter()
            .map(|r| {
                let seed = derive_seed(config.seed, &[0x3e, j as u64, attempt, r]);
                fit_posterior_split(&train, &held, n, d, config, None, seed)
            })
            .collect();
        best_run(runs)
    };

    let mut results: Vec<Result<FitOutcome>> = (0..ENSEMBLE_SIZE)
        .into_par_iter()
        .map(|j| fit_member(j, 0, plan[j]))
        .collect();

    let failures = results.iter().filter(|r| r.is_err()).count();
    if failures >= 2 {
        let first = results.into_iter().find_map(|r| r.err()).expect("failure present");
        return Err(first);
    }
    let mut warm_started = plan.clone();
    if let Some(j) = results.iter().position(|r| r.is_err()) {
        warm_started[j] = false;
        results[j] = fit_member(j, 1, false);
        if results[j].is_err() {
            let best = (0..ENSEMBLE_SIZE)
                .filter(|&k| k != j)
                .min_by(|&a, &b| {
                    let la = results[a].as_ref().map(|o| o.holdout_loss).unwrap_or(f64::INFINITY);
                    let lb = results[b].as_ref().map(|o| o.holdout_loss).unwrap_or(f64::INFINITY);
                    la.total_cmp(&lb)
                })
                .expect("two survivors");
            let copy = results[best].as_ref().expect("survivor").clone();
            results[j] = Ok(copy);
        }
    }

    let mut members = Vec::with_capacity(ENSEMBLE_SIZE);
    let mut val_loss = Vec::with_capacity(ENSEMBLE_SIZE);
    for r in results {
        let outcome = r?;
        val_loss.push(outcome.holdout_loss);
        members.push(outcome.posterior);
    }
    let mut ensemble = Ensemble::from_parts(members, masks, val_loss, iteration)?;
    ensemble.warm_started = warm_started;
    ensemble.n_observations = m;
    Ok(ensemble)
}

/// Whether `previous` was fitted on a prefix of the current `m` observations
/// with holdouts inside that prefix.
fn holdout_carries_over(previous: &Ensemble, m: usize) -> bool {
    let p = previous.n_observations;
    p > 0
        && p <= m
        && previous.holdout_masks.iter().all(|mask| mask.iter().all(|&i| i < p) && mask.len() < p)
}

/// Keeps the previous holdout and samples the same fraction of the
/// observations appended since, so a resumed member is never validated on
/// data it trained on.
fn extend_holdout(previous: &[usize], p: usize, m: usize, config: &FitConfig, seed: u64) -> Vec<usize> {
    let mut mask = previous.to_vec();
    mask.extend(sample_holdout(m - p, config, seed).into_iter().map(|i| i + p));
    mask
}

/// The successful run with the lowest holdout loss (earliest on ties), or
/// the first error when every run failed.
fn best_run(runs: Vec<Result<FitOutcome>>) -> Result<FitOutcome> {
    let mut best: Option<FitOutcome> = None;
    let mut first_err = None;
    for run in runs {
        match run {
            Ok(o) => {
                if best.as_ref().is_none_or(|b| o.holdout_loss < b.holdout_loss) {
                    best = Some(o);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("at least one run"))
}

/// Picks the dimensionality with the lowest loss; a larger candidate must
/// beat the incumbent by more than [`DIMENSION_TIE_TOLERANCE`].
pub fn choose_dimensionality(losses: &[(usize, f64)]) -> Option<usize> {
    let mut sorted: Vec<(usize, f64)> = losses.iter().copied().filter(|(_, l)| l.is_finite()).collect();
    sorted.sort_by_key(|(d, _)| *d);
    let mut best: Option<(usize, f64)> = None;
    for (d, loss) in sorted {
        match best {
            Some((_, b)) if loss >= b - DIMENSION_TIE_TOLERANCE => {}
            _ => best = Some((d, loss)),
        }
    }
    best.map(|(d, _)| d)
}

#[derive(Debug, Clone)]
pub struct DimensionSearch {
    pub chosen: usize,
    /// Mean holdout loss per candidate that fitted successfully.
    pub losses: Vec<(usize, f64)>,
    /// The ensemble fitted at the chosen dimensionality, when a search ran.
    pub ensemble: Option<Ensemble>,
}

/// Fits one ensemble per candidate dimensionality and keeps the one with the
/// lowest mean holdout cross-entropy. All candidates share the same holdout
/// masks, so the comparison is paired.
pub fn select_dimensionality(
    observations: &[Observation],
    n: usize,
    config: &FitConfig,
    iteration: u32,
) -> Result<DimensionSearch> {
    config.validate()?;
    if config.d_candidates.len() == 1 {
        return Ok(DimensionSearch {
            chosen: config.d_candidates[0],
            losses: Vec::new(),
            ensemble: None,
        });
    }
    let fits: Vec<(usize, Result<Ensemble>)> = config
        .d_candidates
        .par_iter()
        .map(|&d| (d, fit_ensemble(observations, n, d, config, None, iteration)))
        .collect();
    let losses: Vec<(usize, f64)> = fits
        .iter()
        .filter_map(|(d, r)| r.as_ref().ok().map(|e| (*d, e.mean_val_loss())))
        .collect();
    let Some(chosen) = choose_dimensionality(&losses) else {
        let err = fits.into_iter().find_map(|(_, r)| r.err());
        return Err(err.unwrap_or_else(|| Error::state("every dimensionality candidate failed")));
    };
    let ensemble = fits
        .into_iter()
        .find(|(d, _)| *d == chosen)
        .and_then(|(_, r)| r.ok());
    Ok(DimensionSearch {
        chosen,
        losses,
        ensemble,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warm_start_keeps_two_best() {
        assert_eq!(warm_start_plan(&[0.9, 1.1, 1.0]), vec![true, false, true]);
        assert_eq!(warm_start_plan(&[2.0, 1.0, 1.5]), vec![false, true, true]);
        assert_eq!(warm_start_plan(&[1.0, 1.0, 1.0]), vec![true, true, false]);
    }

    #[test]
    fn dimensionality_tie_goes_to_smaller() {
        assert_eq!(choose_dimensionality(&[(3, 1.00005), (2, 1.0)]), Some(2));
        assert_eq!(choose_dimensionality(&[(2, 1.00005), (3, 1.0)]), Some(2));
        assert_eq!(choose_dimensionality(&[(1, 1.3), (2, 1.0), (3, 1.1)]), Some(2));
        assert_eq!(choose_dimensionality(&[(2, 1.0), (3, 0.9998)]), Some(3));
        assert_eq!(choose_dimensionality(&[]), None);
    }
}
