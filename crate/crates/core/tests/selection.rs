use std::collections::HashSet;

use hsj_core::active::{
    ensemble_information_gain, expected_information_gain, make_confirmation_trials, sample_references, select_trials,
    Neighborhood, QueryUsageCounter, SelectionConfig, TRIAL_REFERENCES,
};
use hsj_core::model::outcome_probabilities;
use hsj_core::oracle::random_truth;
use hsj_core::seed::rng_from;
use hsj_core::{EmbeddingPosterior, Ensemble, StimulusId, Trial};
use ndarray::Array2;
use proptest::prelude::*;

fn posterior(n: usize, seed: u64, var: f64) -> EmbeddingPosterior {
    let mu = random_truth(n, 2, 0.3, &mut rng_from(seed));
    EmbeddingPosterior::new(mu, Array2::from_elem((n, 2), var), 0.3, 10.0).unwrap()
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Mutual information between the embedding and the outcome, from
/// independent full-posterior draws.
fn brute_force_ig(trial: &Trial, post: &EmbeddingPosterior, samples: usize, seed: u64) -> f64 {
    let mut rng = rng_from(seed);
    let mut mean = vec![0.0; trial.n_outcomes()];
    let mut cond = 0.0;
    for _ in 0..samples {
        let z = post.sample(&mut rng);
        let p = outcome_probabilities(trial, z.view(), post.beta()).unwrap();
        cond += entropy(&p);
        for (m, x) in mean.iter_mut().zip(&p) {
            *m += x / samples as f64;
        }
    }
    entropy(&mean) - cond / samples as f64
}

/// Distinct stimuli nearest to `q` by posterior-mean distance.
fn nearest(post: &EmbeddingPosterior, q: usize, k: usize) -> HashSet<usize> {
    let mu = post.mu();
    let mut order: Vec<(f64, usize)> = (0..post.n())
        .filter(|&i| i != q)
        .map(|i| ((&mu.row(q) - &mu.row(i)).mapv(|x| x * x).sum(), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().take(k).map(|(_, i)| i).collect()
}

fn small_config(seed: u64) -> SelectionConfig {
    SelectionConfig {
        n_queries: 6,
        candidates_per_query: 40,
        keep_per_query: 3,
        n_confirmation: 8,
        neighborhood: Neighborhood::Count(10),
        ig_mc_samples: 16,
        seed,
    }
}

#[test]
fn information_gain_matches_independent_estimate() {
    let post = posterior(12, 1, 0.004);
    let trial = Trial::rank2(0, &[1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
    let want = brute_force_ig(&trial, &post, 20_000, 2);
    let runs: Vec<f64> = (0..8)
        .map(|s| expected_information_gain(&trial, &post, 2048, &mut rng_from(100 + s)).unwrap())
        .collect();
    let got = runs.iter().sum::<f64>() / runs.len() as f64;
    assert!(want > 0.01, "informative instance, got {want}");
    assert!((got - want).abs() <= 0.05 * want + 0.002, "estimate {got} vs reference {want}");
}

#[test]
fn information_gain_estimate_concentrates() {
    let post = posterior(12, 3, 0.01);
    let trial = Trial::rank2(4, &[0, 1, 2, 3, 5, 6, 7, 8]).unwrap();
    let spread = |s: usize| {
        let v: Vec<f64> = (0..30)
            .map(|k| expected_information_gain(&trial, &post, s, &mut rng_from(k)).unwrap())
            .collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    assert!(spread(512) < spread(32));
}

#[test]
fn ensemble_gain_is_member_mean() {
    let members = vec![posterior(10, 4, 0.01), posterior(10, 5, 0.02), posterior(10, 6, 0.005)];
    let ensemble = Ensemble::from_parts(members.clone(), vec![vec![]; 3], vec![1.0; 3], 0).unwrap();
    let trial = Trial::rank2(9, &[0, 1, 2, 3, 4, 5, 6, 7]).unwrap();
    let mut rng = rng_from(6);
    let together = ensemble_information_gain(&trial, &ensemble, 64, &mut rng).unwrap();
    let mut rng = rng_from(6);
    let each: f64 = members
        .iter()
        .map(|m| expected_information_gain(&trial, m, 64, &mut rng).unwrap())
        .sum();
    assert!((together - each / 3.0).abs() < 1e-12);
}

#[test]
fn references_stay_in_the_neighborhood() {
    let post = posterior(30, 7, 0.0);
    let ensemble = Ensemble::replicate(post.clone(), 0);
    let mut rng = rng_from(8);
    for q in 0..30 {
        let hood = nearest(&post, q, 10);
        let refs = sample_references(&ensemble, StimulusId(q), 10, &mut rng).unwrap();
        assert_eq!(refs.len(), TRIAL_REFERENCES);
        let distinct: HashSet<usize> = refs.iter().map(|r| r.index()).collect();
        assert_eq!(distinct.len(), TRIAL_REFERENCES);
        assert!(distinct.is_subset(&hood), "query {q}: {distinct:?} outside {hood:?}");
    }
}

#[test]
fn nine_stimuli_use_everyone_else() {
    let ensemble = Ensemble::replicate(posterior(9, 9, 0.01), 0);
    let refs = sample_references(&ensemble, StimulusId(4), 8, &mut rng_from(1)).unwrap();
    let got: HashSet<usize> = refs.iter().map(|r| r.index()).collect();
    assert_eq!(got, (0..9).filter(|&i| i != 4).collect());
}

#[test]
fn confirmation_trials_mix_near_and_far() {
    let post = posterior(30, 10, 0.0);
    let ensemble = Ensemble::replicate(post.clone(), 0);
    let mut counter = QueryUsageCounter::new();
    let trials = make_confirmation_trials(&ensemble, &mut counter, &small_config(1), &mut rng_from(2)).unwrap();
    assert_eq!(trials.len(), 8);
    for t in &trials {
        let hood = nearest(&post, t.query().index(), 10);
        let inside = t.references().iter().filter(|r| hood.contains(&r.index())).count();
        assert_eq!(inside, 2, "{t:?}");
    }
    assert_eq!(counter.total(), 8);
}

#[test]
fn exact_complement_when_outside_has_six() {
    // 17 stimuli, neighborhood 10: the query's complement is exactly six.
    let post = posterior(17, 11, 0.0);
    let ensemble = Ensemble::replicate(post.clone(), 0);
    let config = SelectionConfig {
        n_confirmation: 5,
        ..small_config(3)
    };
    let trials = make_confirmation_trials(&ensemble, &mut QueryUsageCounter::new(), &config, &mut rng_from(4)).unwrap();
    for t in &trials {
        let q = t.query().index();
        let hood = nearest(&post, q, 10);
        let outside: HashSet<usize> = (0..17).filter(|i| *i != q && !hood.contains(i)).collect();
        let far: HashSet<usize> = t.references().iter().map(|r| r.index()).filter(|i| !hood.contains(i)).collect();
        assert_eq!(far, outside);
    }
}

#[test]
fn keeping_every_candidate_returns_them_all() {
    let ensemble = Ensemble::replicate(posterior(20, 12, 0.01), 0);
    let config = SelectionConfig {
        n_queries: 3,
        candidates_per_query: 4,
        keep_per_query: 4,
        ..small_config(5)
    };
    let got = select_trials(&ensemble, &mut QueryUsageCounter::new(), &config).unwrap();
    assert_eq!(got.len(), 12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn selection_invariants(seed in 0u64..1000, post_seed in 0u64..1000) {
        let members = vec![
            posterior(24, post_seed, 0.01),
            posterior(24, post_seed + 1, 0.02),
            posterior(24, post_seed + 2, 0.005),
        ];
        let ensemble = Ensemble::from_parts(members, vec![vec![]; 3], vec![1.0; 3], 0).unwrap();
        let config = small_config(seed);
        let mut counter = QueryUsageCounter::new();
        let got = select_trials(&ensemble, &mut counter, &config).unwrap();
        prop_assert_eq!(got.len(), config.n_queries * config.keep_per_query);
        prop_assert_eq!(counter.total(), got.len() as u64);
        let keys: HashSet<_> = got.iter().map(|c| c.trial.canonical_key()).collect();
        prop_assert_eq!(keys.len(), got.len());
        for c in &got {
            prop_assert!(!c.trial.references().contains(&c.trial.query()));
            prop_assert!(c.ig >= -1e-12);
        }
        let again = select_trials(&ensemble, &mut QueryUsageCounter::new(), &config).unwrap();
        prop_assert_eq!(got, again);
    }
}
