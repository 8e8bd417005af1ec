use hsj_core::active::random_trials;
use hsj_core::inference::{choose_dimensionality, fit_ensemble, kl_term, ElboObjective, VariationalParams};
use hsj_core::store::EnsembleDocument;
use hsj_core::oracle::{random_truth, Oracle, OracleConfig};
use hsj_core::seed::rng_from;
use hsj_core::{EmbeddingPosterior, FitConfig, Observation};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

/// Closed-form KL of a diagonal Gaussian against an isotropic one, summed
/// over coordinates.
fn kl_reference(mu: &Array2<f64>, var: &Array2<f64>, prior_sigma: f64) -> f64 {
    let p2 = prior_sigma * prior_sigma;
    mu.iter()
        .zip(var)
        .map(|(m, v)| 0.5 * ((v + m * m) / p2 - 1.0 - (v / p2).ln()))
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gradient_matches_central_differences(n in 9usize..13, d in 1usize..4, m in 1usize..12, seed in any::<u64>()) {
        let mut rng = rng_from(seed);
        let truth = random_truth(n, d, 0.3, &mut rng);
        let mut oracle = Oracle::new(OracleConfig { seed, ..OracleConfig::new(truth) }).unwrap();
        let observations: Vec<Observation> = random_trials(n, m, 8, 2, &mut rng)
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, t)| oracle.observe(t).unwrap().with_weight(0.25 + (i % 4) as f64 * 0.25))
            .collect();
        let objective = ElboObjective::new(&observations, n, d, 10.0).unwrap();
        let params = VariationalParams {
            mu: random_truth(n, d, 0.3, &mut rng),
            log_var: Array2::from_shape_fn((n, d), |_| rng.random_range(-5.0..-1.0)),
            log_prior_sigma: rng.random_range(-1.5f64..0.0),
        };
        let noise = objective.draw_noise(2, &mut rng);
        let (loss, analytic) = objective.loss_and_gradient(&params, &noise);
        prop_assert!((loss - objective.loss(&params, &noise)).abs() <= 1e-9 * (1.0 + loss.abs()));
        let base = params.to_vec();
        let h = 1e-6;
        let mut numeric = Vec::with_capacity(base.len());
        for i in 0..base.len() {
            let mut p = params.clone();
            let mut v = base.clone();
            v[i] = base[i] + h;
            p.set_from_slice(&v);
            let up = objective.loss(&p, &noise);
            v[i] = base[i] - h;
            p.set_from_slice(&v);
            let down = objective.loss(&p, &noise);
            numeric.push((up - down) / (2.0 * h));
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
        prop_assert!(diff <= 1e-4 * norm.max(1e-3), "relative error {}", diff / norm);
    }

    #[test]
    fn kl_matches_closed_form(n in 1usize..8, d in 1usize..4, prior in 0.05f64..2.0, seed in any::<u64>()) {
        let mut rng = rng_from(seed);
        let mu = random_truth(n, d, 0.5, &mut rng);
        let var = Array2::from_shape_fn((n, d), |_| rng.random_range(1e-4..1.0));
        let post = EmbeddingPosterior::new(mu.clone(), var.clone(), prior, 10.0).unwrap();
        let got = kl_term(&post).unwrap();
        let want = kl_reference(&mu, &var, prior);
        prop_assert!((got - want).abs() <= 1e-9 * (1.0 + want.abs()));
        prop_assert!(got >= -1e-12);
    }

    #[test]
    fn params_round_trip_through_posterior(n in 1usize..8, d in 1usize..4, seed in any::<u64>()) {
        let mut rng = rng_from(seed);
        let params = VariationalParams {
            mu: random_truth(n, d, 0.5, &mut rng),
            log_var: Array2::from_shape_fn((n, d), |_| rng.random_range(-6.0..0.0)),
            log_prior_sigma: rng.random_range(-2.0f64..1.0),
        };
        let back = VariationalParams::from_posterior(&params.to_posterior(10.0).unwrap()).unwrap();
        for (a, b) in params.to_vec().iter().zip(back.to_vec()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn smaller_dimension_wins_ties() {
    assert_eq!(choose_dimensionality(&[(1, 2.0), (2, 2.0), (3, 1.99995)]), Some(1));
    assert_eq!(choose_dimensionality(&[(3, 1.5), (1, 2.0), (2, 1.6)]), Some(3));
    assert_eq!(choose_dimensionality(&[(1, f64::NAN), (2, 1.0)]), Some(2));
    assert_eq!(choose_dimensionality(&[]), None);
}

#[test]
fn resumed_members_keep_their_holdout() {
    let n = 12;
    let mut rng = rng_from(8);
    let truth = random_truth(n, 2, 0.3, &mut rng);
    let mut oracle = Oracle::new(OracleConfig { seed: 8, ..OracleConfig::new(truth) }).unwrap();
    let observations = oracle.observe_all(&random_trials(n, 160, 8, 2, &mut rng).unwrap()).unwrap();
    let config = |seed| FitConfig {
        d_candidates: vec![2],
        max_epochs: 60,
        patience: 20,
        restarts: 1,
        eval_mc_samples: 8,
        seed,
        ..FitConfig::default()
    };
    let first = fit_ensemble(&observations[..100], n, 2, &config(1), None, 0).unwrap();
    assert_eq!(first.n_observations(), 100);
    let second = fit_ensemble(&observations, n, 2, &config(2), Some(&first), 1).unwrap();
    assert_eq!(second.n_observations(), 160);
    for (old, new) in first.holdout_masks().iter().zip(second.holdout_masks()) {
        let (kept, added): (Vec<usize>, Vec<usize>) = new.iter().partition(|&&i| i < 100);
        assert_eq!(&kept, old);
        assert_eq!(added.len(), 3);
        assert!(added.iter().all(|&i| i < 160));
    }

    // Without a usable count the masks are drawn afresh.
    let unknown = first.clone().with_observation_count(0);
    let third = fit_ensemble(&observations, n, 2, &config(2), Some(&unknown), 1).unwrap();
    assert!(third.holdout_masks().iter().all(|m| m.len() == 8));

    let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let back = EnsembleDocument::from_ensemble(&second, &ids).unwrap().to_ensemble().unwrap();
    assert_eq!(back.n_observations(), 160);
    assert_eq!(back.holdout_masks(), second.holdout_masks());
}
