use hsj_core::metrics::{expand_triplets, triplet_accuracy, Distance};
use hsj_core::stats::{average_ranks, chi_square_test, g_test, pearson, sign_test, spearman_trend_test};
use hsj_core::{Observation, OutcomeIndex, Trial};
use ndarray::Array2;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn choose(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn permutations(items: &[f64]) -> Vec<Vec<f64>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

proptest! {
    #[test]
    fn sign_test_is_binomial_tail(n in 1u64..60, pick in any::<prop::sample::Index>()) {
        let wins = pick.index(n as usize + 1) as u64;
        let want: f64 = (wins..=n).map(|k| choose(n, k)).sum::<f64>() / 2f64.powi(n as i32);
        let got = sign_test(wins, n).unwrap();
        prop_assert!((got - want).abs() <= 1e-10, "{} vs {}", got, want);
    }

    #[test]
    fn goodness_of_fit_without_pooling(counts in prop::collection::vec(6u64..60, 2..8)) {
        // Uniform probabilities with every expected count at least 6.
        let k = counts.len();
        let n: u64 = counts.iter().sum();
        let probs = vec![1.0 / k as f64; k];
        prop_assume!(n as f64 / k as f64 >= 5.0);
        let e = n as f64 / k as f64;
        let g: f64 = 2.0 * counts.iter().map(|&o| o as f64 * (o as f64 / e).ln()).sum::<f64>();
        let x2: f64 = counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
        let dist = ChiSquared::new((k - 1) as f64).unwrap();
        let gt = g_test(&counts, &probs).unwrap();
        let ct = chi_square_test(&counts, &probs).unwrap();
        prop_assert_eq!(gt.dof, k - 1);
        prop_assert!((gt.statistic - g.max(0.0)).abs() <= 1e-9 * (1.0 + g.abs()));
        prop_assert!((gt.p_value - dist.sf(g.max(0.0))).abs() <= 1e-12);
        prop_assert!((ct.statistic - x2).abs() <= 1e-9 * (1.0 + x2));
        prop_assert!((ct.p_value - dist.sf(x2)).abs() <= 1e-12);
    }

    #[test]
    fn exact_trend_matches_enumeration(values in prop::collection::vec(0u8..6, 3..8)) {
        let values: Vec<f64> = values.into_iter().map(f64::from).collect();
        prop_assume!(values.iter().any(|v| *v != values[0]));
        let positions: Vec<f64> = (1..=values.len()).map(|i| i as f64).collect();
        let rho = |v: &[f64]| pearson(&positions, &average_ranks(v)).unwrap();
        let observed = rho(&values);
        let all = permutations(&values);
        let hits = all.iter().filter(|p| rho(p) >= observed - 1e-12).count();
        let got = spearman_trend_test(&values).unwrap();
        prop_assert!(got.exact);
        prop_assert!((got.rho - observed).abs() <= 1e-12);
        prop_assert!((got.p_value - hits as f64 / all.len() as f64).abs() <= 1e-12);
    }

    #[test]
    fn triplet_accuracy_matches_pairwise_count(
        feats in prop::collection::vec(-1.0f64..1.0, 12 * 3),
        outcomes in prop::collection::vec(0usize..56, 1..10),
    ) {
        let features = Array2::from_shape_vec((12, 3), feats).unwrap();
        let observations: Vec<Observation> = outcomes
            .iter()
            .enumerate()
            .map(|(i, &o)| {
                let q = i % 12;
                let refs: Vec<usize> = (1..=8).map(|k| (q + k) % 12).collect();
                Observation::new(Trial::rank2(q, &refs).unwrap(), OutcomeIndex(o))
            })
            .collect();
        let mut triplets = Vec::new();
        let (mut right, mut total) = (0usize, 0usize);
        for obs in &observations {
            let t = expand_triplets(obs).unwrap();
            prop_assert_eq!(t.len(), 7 + 6);
            triplets.extend(t);
            let refs = obs.trial.references();
            let chosen = obs.trial.decode(obs.outcome).unwrap();
            let q = features.row(obs.trial.query().index()).to_vec();
            let dist = |p: usize| Distance::L2.between(&q, &features.row(refs[p].index()).to_vec());
            for p in 0..8 {
                for r in 0..8 {
                    let p_rank = chosen.iter().position(|&c| c == p).unwrap_or(2);
                    let r_rank = chosen.iter().position(|&c| c == r).unwrap_or(2);
                    if p_rank < r_rank {
                        total += 1;
                        if dist(p) < dist(r) {
                            right += 1;
                        }
                    }
                }
            }
        }
        prop_assert_eq!(triplets.len(), total);
        let got = triplet_accuracy(features.view(), &triplets, Distance::L2).unwrap();
        prop_assert!((got - right as f64 / total as f64).abs() <= 1e-12);
    }
}

#[test]
fn impossible_cells_reject() {
    let r = g_test(&[3, 0, 2], &[0.5, 0.5, 0.0]).unwrap();
    assert_eq!(r.p_value, 0.0);
}

#[test]
fn sparse_cells_are_pooled() {
    // Expected counts 1, 1, 8, 10: the two sparse cells pool with the next.
    let r = chi_square_test(&[1, 1, 8, 10], &[0.05, 0.05, 0.4, 0.5]).unwrap();
    assert_eq!(r.dof, 1);
}
