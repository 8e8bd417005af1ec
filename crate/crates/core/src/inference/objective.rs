//! Variational free energy and its gradient.
//!
//! The objective is `KL(q || prior) - E_q[log p(D | Z)]`. The KL term is
//! closed form for diagonal Gaussians; the expected log-likelihood uses
//! reparameterized draws `Z = mu + exp(log_var / 2) * eps`. Passing the same
//! `eps` draws to [`ElboObjective::loss`] and
//! [`ElboObjective::loss_and_gradient`] makes the estimate a deterministic
//! function of the parameters, which is what finite-difference checks need.

use ndarray::{Array2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    outcome_log_prob, outcome_log_prob_with_grad, EmbeddingPosterior, Observation, MAX_REFERENCES,
};

const CHUNK: usize = 256;

/// Unconstrained variational parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams {
    pub mu: Array2<f64>,
    pub log_var: Array2<f64>,
    pub log_prior_sigma: f64,
}

impl VariationalParams {
    pub fn n(&self) -> usize {
        self.mu.nrows()
    }

    pub fn d(&self) -> usize {
        self.mu.ncols()
    }

    pub fn from_posterior(posterior: &EmbeddingPosterior) -> Result<Self> {
        if posterior.sigma2.iter().any(|v| *v <= 0.0) {
            return Err(Error::arg("warm start requires strictly positive variances"));
        }
        Ok(VariationalParams {
            mu: posterior.mu.clone(),
            log_var: posterior.sigma2.mapv(f64::ln),
            log_prior_sigma: posterior.prior_sigma.ln(),
        })
    }

    pub fn to_posterior(&self, beta: f64) -> Result<EmbeddingPosterior> {
        EmbeddingPosterior::new(
            self.mu.clone(),
            self.log_var.mapv(f64::exp),
            self.log_prior_sigma.exp(),
            beta,
        )
    }

    pub fn len(&self) -> usize {
        2 * self.mu.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat layout: means (row-major), log-variances, log prior scale.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend(self.mu.iter());
        v.extend(self.log_var.iter());
        v.push(self.log_prior_sigma);
        v
    }

    pub fn set_from_slice(&mut self, values: &[f64]) {
        let m = self.mu.len();
        assert_eq!(values.len(), 2 * m + 1);
        self.mu.iter_mut().zip(&values[..m]).for_each(|(a, b)| *a = *b);
        self.log_var
            .iter_mut()
            .zip(&values[m..2 * m])
            .for_each(|(a, b)| *a = *b);
        self.log_prior_sigma = values[2 * m];
    }
}

/// `sum_i KL(N(mu_i, diag sigma2_i) || N(0, prior_sigma^2 I))`.
pub fn kl_term(posterior: &EmbeddingPosterior) -> Result<f64> {
    if posterior.sigma2.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::arg("KL requires strictly positive posterior variances"));
    }
    let prior_var = posterior.prior_sigma * posterior.prior_sigma;
    let mut kl = 0.0;
    Zip::from(&posterior.mu)
        .and(&posterior.sigma2)
        .for_each(|&m, &v| {
            let ratio = v / prior_var;
            kl += 0.5 * (ratio + m * m / prior_var - 1.0 - ratio.ln());
        });
    Ok(kl.max(0.0))
}

fn kl_from_params(p: &VariationalParams) -> f64 {
    let prior_var = (2.0 * p.log_prior_sigma).exp();
    let log_prior_var = 2.0 * p.log_prior_sigma;
    let mut kl = 0.0;
    Zip::from(&p.mu).and(&p.log_var).for_each(|&m, &lv| {
        kl += 0.5 * ((lv.exp() + m * m) / prior_var - 1.0 - lv + log_prior_var);
    });
    kl
}

/// An observation with its outcome decoded, ready for repeated evaluation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CompiledObservation {
    pub query: usize,
    pub refs: [usize; MAX_REFERENCES],
    pub r: usize,
    pub chosen: [usize; MAX_REFERENCES],
    pub c: usize,
    pub weight: f64,
}

impl CompiledObservation {
    pub fn compile(obs: &Observation, n: usize) -> Result<Self> {
        if obs.trial.max_index() >= n {
            return Err(Error::arg(format!(
                "observation references stimulus {} beyond catalog size {n}",
                obs.trial.max_index()
            )));
        }
        let positions = obs.trial.decode(obs.outcome)?;
        let mut refs = [0; MAX_REFERENCES];
        for (slot, r) in refs.iter_mut().zip(obs.trial.references()) {
            *slot = r.index();
        }
        let mut chosen = [0; MAX_REFERENCES];
        chosen[..positions.len()].copy_from_slice(&positions);
        Ok(CompiledObservation {
            query: obs.trial.query().index(),
            refs,
            r: obs.trial.n_references(),
            chosen,
            c: positions.len(),
            weight: obs.weight,
        })
    }

    fn logits(&self, z: &Array2<f64>, beta: f64) -> [f64; MAX_REFERENCES] {
        let mut logits = [0.0; MAX_REFERENCES];
        let zq = z.row(self.query);
        for (j, &r) in self.refs[..self.r].iter().enumerate() {
            let zr = z.row(r);
            let d2: f64 = zq.iter().zip(zr.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            logits[j] = -beta * d2.sqrt();
        }
        logits
    }

    pub fn log_prob(&self, z: &Array2<f64>, beta: f64) -> f64 {
        let logits = self.logits(z, beta);
        outcome_log_prob(&logits[..self.r], &self.chosen[..self.c])
    }
}

pub(crate) fn compile_all(observations: &[Observation], n: usize) -> Result<Vec<CompiledObservation>> {
    observations
        .iter()
        .map(|o| CompiledObservation::compile(o, n))
        .collect()
}

/// Weighted log-likelihood of `z`, adding `d/dz` into `grad`.
fn log_likelihood_with_grad(
    data: &[CompiledObservation],
    z: &Array2<f64>,
    beta: f64,
    grad: &mut Array2<f64>,
) -> f64 {
    let d = z.ncols();
    let mut total = 0.0;
    let mut diff = vec![0.0; d];
    for obs in data {
        let zq = z.row(obs.query);
        let mut logits = [0.0; MAX_REFERENCES];
        let mut dists = [0.0; MAX_REFERENCES];
        for (j, &r) in obs.refs[..obs.r].iter().enumerate() {
            let zr = z.row(r);
            let d2: f64 = zq.iter().zip(zr.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            dists[j] = d2.sqrt();
            logits[j] = -beta * dists[j];
        }
        let mut g_logit = [0.0; MAX_REFERENCES];
        total += obs.weight
            * outcome_log_prob_with_grad(&logits[..obs.r], &obs.chosen[..obs.c], &mut g_logit[..obs.r]);
        for (j, &r) in obs.refs[..obs.r].iter().enumerate() {
            // The distance is not differentiable at zero; use the zero subgradient.
            if dists[j] < 1e-12 {
                continue;
            }
            let scale = obs.weight * g_logit[j] * (-beta) / dists[j];
            for k in 0..d {
                diff[k] = z[[obs.query, k]] - z[[r, k]];
            }
            for k in 0..d {
                grad[[obs.query, k]] += scale * diff[k];
                grad[[r, k]] -= scale * diff[k];
            }
        }
    }
    total
}

fn log_likelihood(data: &[CompiledObservation], z: &Array2<f64>, beta: f64) -> f64 {
    data.iter().map(|o| o.weight * o.log_prob(z, beta)).sum()
}

/// Free-energy objective over a fixed training set.
#[derive(Debug, Clone)]
pub struct ElboObjective {
    data: Vec<CompiledObservation>,
    n: usize,
    d: usize,
    beta: f64,
}

impl ElboObjective {
    pub fn new(observations: &[Observation], n: usize, d: usize, beta: f64) -> Result<Self> {
        if d == 0 || n == 0 {
            return Err(Error::arg("objective needs n > 0 and d > 0"));
        }
        Ok(ElboObjective {
            data: compile_all(observations, n)?,
            n,
            d,
            beta,
        })
    }

    pub fn n_observations(&self) -> usize {
        self.data.len()
    }

    /// Standard-normal draws, one `n x d` matrix per Monte-Carlo sample.
    pub fn draw_noise<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> Vec<Array2<f64>> {
        (0..samples)
            .map(|_| Array2::from_shape_fn((self.n, self.d), |_| rng.sample(StandardNormal)))
            .collect()
    }

    fn locations(params: &VariationalParams, eps: &Array2<f64>) -> Array2<f64> {
        let mut z = params.mu.clone();
        Zip::from(&mut z)
            .and(&params.log_var)
            .and(eps)
            .for_each(|z, &lv, &e| *z += (0.5 * lv).exp() * e);
        z
    }

    fn check(&self, params: &VariationalParams, noise: &[Array2<f64>]) {
        assert_eq!(params.mu.dim(), (self.n, self.d), "parameter shape");
        assert!(!noise.is_empty(), "at least one noise draw");
    }

    pub fn loss(&self, params: &VariationalParams, noise: &[Array2<f64>]) -> f64 {
        self.check(params, noise);
        let mut expected_ll = 0.0;
        for eps in noise {
            let z = Self::locations(params, eps);
            let partials: Vec<f64> = self
                .data
                .par_chunks(CHUNK)
                .map(|chunk| log_likelihood(chunk, &z, self.beta))
                .collect();
            expected_ll += partials.iter().sum::<f64>();
        }
        kl_from_params(params) - expected_ll / noise.len() as f64
    }

    /// Loss plus its gradient in the flat layout of [`VariationalParams::to_vec`].
    pub fn loss_and_gradient(&self, params: &VariationalParams, noise: &[Array2<f64>]) -> (f64, Vec<f64>) {
        self.check(params, noise);
        let s = noise.len() as f64;
        let prior_var = (2.0 * params.log_prior_sigma).exp();
        let mut g_mu = params.mu.mapv(|m| m / prior_var);
        let mut g_lv = params.log_var.mapv(|lv| 0.5 * (lv.exp() / prior_var - 1.0));
        let mut g_prior = 0.0;
        Zip::from(&params.mu).and(&params.log_var).for_each(|&m, &lv| {
            g_prior += 1.0 - (lv.exp() + m * m) / prior_var;
        });

        let mut expected_ll = 0.0;
        for eps in noise {
            let z = Self::locations(params, eps);
            let partials: Vec<(f64, Array2<f64>)> = self
                .data
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut g = Array2::zeros((self.n, self.d));
                    let ll = log_likelihood_with_grad(chunk, &z, self.beta, &mut g);
                    (ll, g)
                })
                .collect();
            let mut g_z = Array2::<f64>::zeros((self.n, self.d));
            for (ll, g) in partials {
                expected_ll += ll;
                g_z += &g;
            }
            Zip::from(&mut g_mu).and(&g_z).for_each(|gm, &gz| *gm -= gz / s);
            Zip::from(&mut g_lv)
                .and(&g_z)
                .and(eps)
                .and(&params.log_var)
                .for_each(|gl, &gz, &e, &lv| *gl -= gz * e * 0.5 * (0.5 * lv).exp() / s);
        }
        let loss = kl_from_params(params) - expected_ll / s;
        let mut grad = Vec::with_capacity(params.len());
        grad.extend(g_mu.iter());
        grad.extend(g_lv.iter());
        grad.push(g_prior);
        (loss, grad)
    }
}

/// Monte-Carlo estimate of the free energy `KL - E_q[log p(D | Z)]`.
pub fn elbo_loss<R: Rng + ?Sized>(
    observations: &[Observation],
    posterior: &EmbeddingPosterior,
    mc_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if mc_samples == 0 {
        return Err(Error::arg("mc_samples must be at least 1"));
    }
    let kl = kl_term(posterior)?;
    let data = compile_all(observations, posterior.n())?;
    if data.is_empty() {
        return Ok(kl);
    }
    let mut expected_ll = 0.0;
    for _ in 0..mc_samples {
        let z = posterior.sample(rng);
        expected_ll += log_likelihood(&data, &z, posterior.beta);
    }
    Ok(kl - expected_ll / mc_samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{OutcomeIndex, Trial};
    use crate::seed::rng_from;
    use ndarray::array;

    fn posterior(mu: Array2<f64>, s2: f64, prior: f64) -> EmbeddingPosterior {
        let sigma2 = Array2::from_elem(mu.dim(), s2);
        EmbeddingPosterior::new(mu, sigma2, prior, 10.0).unwrap()
    }

    #[test]
    fn kl_matches_closed_form() {
        let p = posterior(Array2::zeros((4, 3)), 0.25, 0.5);
        assert_eq!(kl_term(&p).unwrap(), 0.0);
        let p = posterior(array![[1.0]], 1.0, 1.0);
        assert!((kl_term(&p).unwrap() - 0.5).abs() < 1e-15);
        let base = posterior(array![[0.3, -0.2], [0.1, 0.4]], 0.7, 1.3);
        let doubled = posterior(array![[0.6, -0.4], [0.2, 0.8]], 0.7, 1.3);
        let zero = posterior(Array2::zeros((2, 2)), 0.7, 1.3);
        let k0 = kl_term(&zero).unwrap();
        let quad = kl_term(&base).unwrap() - k0;
        assert!(((kl_term(&doubled).unwrap() - k0) - 4.0 * quad).abs() < 1e-12);
    }

    #[test]
    fn kl_rejects_point_posteriors() {
        let p = EmbeddingPosterior::point(array![[0.0, 1.0]], 10.0).unwrap();
        assert!(kl_term(&p).is_err());
    }

    #[test]
    fn elbo_without_data_is_kl() {
        let p = posterior(array![[0.2, 0.1], [0.0, -0.3]], 0.04, 0.5);
        let mut rng = rng_from(3);
        assert_eq!(elbo_loss(&[], &p, 4, &mut rng).unwrap(), kl_term(&p).unwrap());
    }

    #[test]
    fn elbo_is_deterministic_under_seed() {
        let p = posterior(array![[0.2], [0.0], [-0.3], [0.5]], 0.01, 0.5);
        let obs = vec![Observation::new(Trial::rank2(0, &[1, 2, 3]).unwrap(), OutcomeIndex(4))];
        let a = elbo_loss(&obs, &p, 8, &mut rng_from(11)).unwrap();
        let b = elbo_loss(&obs, &p, 8, &mut rng_from(11)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn objective_agrees_with_elbo_loss_at_same_noise() {
        let mu = array![[0.2, 0.0], [0.0, -0.3], [0.4, 0.1], [-0.1, 0.2]];
        let p = posterior(mu, 0.02, 0.6);
        let obs = vec![
            Observation::new(Trial::rank2(0, &[1, 2, 3]).unwrap(), OutcomeIndex(1)),
            Observation::new(Trial::rank2(2, &[3, 0, 1]).unwrap(), OutcomeIndex(0)).with_weight(0.5),
        ];
        let objective = ElboObjective::new(&obs, 4, 2, 10.0).unwrap();
        let params = VariationalParams::from_posterior(&p).unwrap();
        let noise = objective.draw_noise(1, &mut rng_from(5));
        let (loss, _) = objective.loss_and_gradient(&params, &noise);
        assert!((loss - objective.loss(&params, &noise)).abs() < 1e-12);
        let z = ElboObjective::locations(&params, &noise[0]);
        let ll = crate::model::weighted_log_likelihood(&obs, z.view(), 10.0).unwrap();
        assert!((loss - (kl_term(&p).unwrap() - ll)).abs() < 1e-10);
    }
}
