use ndarray::Array2;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::objective::{compile_all, CompiledObservation, ElboObjective, VariationalParams};
use crate::error::{Error, Result};
use crate::model::{EmbeddingPosterior, Observation, DEFAULT_BETA};
use crate::seed::{derive_seed, rng_from};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub d_candidates: Vec<usize>,
    /// Reparameterized draws per gradient step.
    pub mc_samples_elbo: usize,
    /// Posterior draws used for holdout cross-entropy and reported losses.
    pub eval_mc_samples: usize,
    pub max_epochs: usize,
    /// Epochs without holdout improvement before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    /// Independent initializations per fresh fit; the best by holdout loss
    /// is kept.
    pub restarts: usize,
    pub holdout_fraction: f64,
    pub beta: f64,
    /// Variance of the initial means.
    pub init_mu_variance: f64,
    pub init_variance: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            d_candidates: vec![1, 2, 3],
            mc_samples_elbo: 1,
            eval_mc_samples: 32,
            max_epochs: 2000,
            patience: 100,
            learning_rate: 0.01,
            restarts: 3,
            holdout_fraction: 0.05,
            beta: DEFAULT_BETA,
            init_mu_variance: 0.1,
            init_variance: 0.01,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_candidates.is_empty() || self.d_candidates.contains(&0) {
            return Err(Error::arg("d_candidates must be nonempty and positive"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 0.5) {
            return Err(Error::arg("holdout_fraction must lie in (0, 0.5)"));
        }
        if self.mc_samples_elbo == 0 || self.eval_mc_samples == 0 {
            return Err(Error::arg("sample counts must be positive"));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.restarts == 0 {
            return Err(Error::arg("max_epochs, patience and restarts must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.beta > 0.0) {
            return Err(Error::arg("learning_rate and beta must be positive"));
        }
        Ok(())
    }

    /// Holdout size for `m` observations: `round(fraction * m)`.
    pub fn holdout_size(&self, m: usize) -> usize {
        (self.holdout_fraction * m as f64).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub holdout_loss: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub posterior: EmbeddingPosterior,
    /// Holdout loss of the returned parameters.
    pub holdout_loss: f64,
    pub best_epoch: usize,
    pub trace: Vec<EpochRecord>,
}

/// Random holdout of `round(fraction * m)` observation indices, sorted.
pub fn sample_holdout(m: usize, config: &FitConfig, seed: u64) -> Vec<usize> {
    let size = config.holdout_size(m).min(m.saturating_sub(1));
    let mut rng = rng_from(seed);
    let mut idx = sample_indices(&mut rng, m, size).into_vec();
    idx.sort_unstable();
    idx
}

pub(crate) fn split(observations: &[Observation], holdout: &[usize]) -> (Vec<Observation>, Vec<Observation>) {
    let mut is_holdout = vec![false; observations.len()];
    for &i in holdout {
        is_holdout[i] = true;
    }
    let mut train = Vec::with_capacity(observations.len() - holdout.len());
    let mut held = Vec::with_capacity(holdout.len());
    for (obs, h) in observations.iter().zip(is_holdout) {
        if h {
            held.push(obs.clone());
        } else {
            train.push(obs.clone());
        }
    }
    (train, held)
}

fn initial_params<R: Rng + ?Sized>(n: usize, d: usize, config: &FitConfig, rng: &mut R) -> VariationalParams {
    let normal = Normal::new(0.0, config.init_mu_variance.sqrt()).expect("finite init variance");
    VariationalParams {
        mu: Array2::from_shape_fn((n, d), |_| normal.sample(rng)),
        log_var: Array2::from_elem((n, d), config.init_variance.ln()),
        log_prior_sigma: 0.5 * config.init_mu_variance.ln(),
    }
}

/// Weight-averaged categorical cross-entropy of posterior-predictive
/// probabilities (averaged in probability space over frozen draws).
pub(crate) struct HoldoutEvaluator {
    data: Vec<CompiledObservation>,
    noise: Vec<Array2<f64>>,
    beta: f64,
}

impl HoldoutEvaluator {
    pub fn new(holdout: &[Observation], n: usize, d: usize, beta: f64, samples: usize, seed: u64) -> Result<Self> {
        let mut rng = rng_from(seed);
        let noise = (0..samples)
            .map(|_| Array2::from_shape_fn((n, d), |_| rng.sample(StandardNormal)))
            .collect();
        Ok(HoldoutEvaluator {
            data: compile_all(holdout, n)?,
            noise,
            beta,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn loss(&self, mu: &Array2<f64>, sigma2: &Array2<f64>) -> f64 {
        let zs: Vec<Array2<f64>> = self
            .noise
            .iter()
            .map(|eps| mu + &(sigma2.mapv(f64::sqrt) * eps))
            .collect();
        predictive_cross_entropy(&self.data, &zs, self.beta)
    }
}

/// `-sum w log mean_s p(y | Z_s) / sum w`; unweighted when all weights are 0.
pub(crate) fn predictive_cross_entropy(data: &[CompiledObservation], zs: &[Array2<f64>], beta: f64) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let log_s = (zs.len() as f64).ln();
    let mut num = 0.0;
    let mut den = 0.0;
    let mut plain = 0.0;
    let mut lps = Vec::with_capacity(zs.len());
    for obs in data {
        lps.clear();
        lps.extend(zs.iter().map(|z| obs.log_prob(z, beta)));
        let log_mean = crate::model::log_sum_exp(lps.iter().copied()) - log_s;
        num -= obs.weight * log_mean;
        den += obs.weight;
        plain -= log_mean;
    }
    if den > 0.0 {
        num / den
    } else {
        plain / data.len() as f64
    }
}

struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Fits one posterior on an explicit train/holdout split.
///
/// Every epoch is one full-batch Adam step on the free energy. The holdout
/// cross-entropy is tracked from epoch 0 (the initial parameters) and the
/// parameters with the lowest holdout loss are returned. With an
/// empty holdout the training loss is monitored instead.
#[allow(clippy::too_many_arguments)]
pub fn fit_posterior_split(
    train: &[Observation],
    holdout: &[Observation],
    n: usize,
    d: usize,
    config: &FitConfig,
    init: Option<&EmbeddingPosterior>,
    seed: u64,
) -> Result<FitOutcome> {
    config.validate()?;
    if train.is_empty() && holdout.is_empty() {
        return Err(Error::arg("cannot fit without observations"));
    }
    let mut params = match init {
        Some(p) => {
            if p.d() != d || p.n() != n {
                return Err(Error::arg(format!(
                    "warm start has shape {}x{}, expected {n}x{d}",
                    p.n(),
                    p.d()
                )));
            }
            VariationalParams::from_posterior(p)?
        }
        None => initial_params(n, d, config, &mut rng_from(derive_seed(seed, &[0x1417]))),
    };
    let objective = ElboObjective::new(train, n, d, config.beta)?;
    let evaluator = HoldoutEvaluator::new(
        holdout,
        n,
        d,
        config.beta,
        config.eval_mc_samples,
        derive_seed(seed, &[0xe7a1]),
    )?;
    let mut noise_rng = rng_from(derive_seed(seed, &[0x2015e]));
    let mut optimizer = Adam::new(params.len(), config.learning_rate);
    let mut flat = params.to_vec();
    let mut trace = Vec::new();
    let mut best: Option<(f64, usize, VariationalParams)> = None;

    for epoch in 0..=config.max_epochs {
        let noise = objective.draw_noise(config.mc_samples_elbo, &mut noise_rng);
        let (train_loss, grad) = objective.loss_and_gradient(&params, &noise);
        let monitored = if evaluator.is_empty() {
            train_loss
        } else {
            evaluator.loss(&params.mu, &params.log_var.mapv(f64::exp))
        };
        trace.push(EpochRecord {
            epoch,
            train_loss,
            holdout_loss: monitored,
        });
        if !train_loss.is_finite() || !monitored.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Fit {
                message: format!("non-finite loss at epoch {epoch}"),
                trace,
            });
        }
        let improved = best.as_ref().is_none_or(|(b, _, _)| monitored < *b);
        if improved {
            best = Some((monitored, epoch, params.clone()));
        } else {
            let best_epoch = best.as_ref().map_or(0, |b| b.1);
            if epoch - best_epoch >= config.patience {
                break;
            }
        }
        if epoch == config.max_epochs {
            break;
        }
        optimizer.step(&mut flat, &grad);
        params.set_from_slice(&flat);
    }

    let (holdout_loss, best_epoch, best_params) = best.expect("at least one epoch evaluated");
    Ok(FitOutcome {
        posterior: best_params.to_posterior(config.beta)?,
        holdout_loss,
        best_epoch,
        trace,
    })
}

/// Fits one posterior, drawing its own holdout split from `config.seed`.
pub fn fit_posterior(
    observations: &[Observation],
    n: usize,
    d: usize,
    config: &FitConfig,
    init: Option<&EmbeddingPosterior>,
) -> Result<FitOutcome> {
    if observations.is_empty() {
        return Err(Error::arg("cannot fit without observations"));
    }
    let holdout = sample_holdout(observations.len(), config, derive_seed(config.seed, &[0x401d]));
    let (train, held) = split(observations, &holdout);
    fit_posterior_split(&train, &held, n, d, config, init, config.seed)
}

/// Holdout cross-entropy of a posterior on `observations`, averaged over
/// `samples` posterior draws.
pub fn predictive_loss<R: Rng + ?Sized>(
    posterior: &EmbeddingPosterior,
    observations: &[Observation],
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::arg("samples must be positive"));
    }
    let data = compile_all(observations, posterior.n())?;
    let zs: Vec<Array2<f64>> = (0..samples).map(|_| posterior.sample(rng)).collect();
    Ok(predictive_cross_entropy(&data, &zs, posterior.beta))
}
