use hsj_core::model::{
    decode_outcome, encode_outcome, enumerate_outcomes, n_permutations, outcome_log_probabilities,
    outcome_probabilities, weighted_log_likelihood,
};
use hsj_core::{Observation, OutcomeIndex, StimulusId, Trial};
use ndarray::Array2;
use proptest::prelude::*;

/// Direct product form of the ranked Luce model.
fn brute_force(trial: &Trial, z: &Array2<f64>, beta: f64) -> Vec<f64> {
    let q = z.row(trial.query().index());
    let s: Vec<f64> = trial
        .references()
        .iter()
        .map(|r| {
            let d = (&q - &z.row(r.index())).mapv(|x| x * x).sum().sqrt();
            (-beta * d).exp()
        })
        .collect();
    enumerate_outcomes(trial.n_references(), trial.n_select())
        .unwrap()
        .iter()
        .map(|tuple| {
            let mut p = 1.0;
            for (k, &j) in tuple.iter().enumerate() {
                let remaining: f64 = (0..s.len()).filter(|i| !tuple[..k].contains(i)).map(|i| s[i]).sum();
                p *= s[j] / remaining;
            }
            p
        })
        .collect()
}

fn factorial(k: usize) -> usize {
    (1..=k).product()
}

prop_compose! {
    fn instance()(r in 2usize..9, extra in 0usize..4, d in 1usize..4)
        (c in 1..r, z in prop::collection::vec(-1.0f64..1.0, (r + 1 + extra) * d),
         perm in Just((0..r + 1 + extra).collect::<Vec<usize>>()).prop_shuffle(),
         r in Just(r), d in Just(d), n in Just(r + 1 + extra), beta in 0.5f64..15.0)
        -> (Trial, Array2<f64>, f64)
    {
        let trial = Trial::new(StimulusId(perm[0]), perm[1..=r].iter().map(|&i| StimulusId(i)).collect(), c).unwrap();
        (trial, Array2::from_shape_vec((n, d), z).unwrap(), beta)
    }
}

#[test]
fn outcome_counts_match_factorial_formula() {
    for r in 1..=8 {
        for c in 0..r {
            if c == 0 {
                continue;
            }
            let outcomes = enumerate_outcomes(r, c).unwrap();
            assert_eq!(outcomes.len(), factorial(r) / factorial(r - c));
            assert_eq!(outcomes.len(), n_permutations(r, c));
            let mut sorted = outcomes.clone();
            sorted.sort();
            assert_eq!(sorted, outcomes, "lexicographic order for r={r} c={c}");
        }
    }
}

proptest! {
    #[test]
    fn probabilities_match_brute_force((trial, z, beta) in instance()) {
        let fast = outcome_probabilities(&trial, z.view(), beta).unwrap();
        let slow = brute_force(&trial, &z, beta);
        prop_assert_eq!(fast.len(), slow.len());
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).abs() <= 1e-12 + 1e-10 * b, "{} vs {}", a, b);
        }
        let total: f64 = fast.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
        prop_assert!(fast.iter().all(|p| *p >= 0.0));
    }

    #[test]
    fn log_probabilities_agree((trial, z, beta) in instance()) {
        let logs = outcome_log_probabilities(&trial, z.view(), beta).unwrap();
        let probs = outcome_probabilities(&trial, z.view(), beta).unwrap();
        for (l, p) in logs.iter().zip(&probs) {
            prop_assert!((l.exp() - p).abs() <= 1e-12);
        }
    }

    #[test]
    fn rigid_motions_leave_probabilities_unchanged((trial, z, beta) in instance(), angle in 0.0f64..6.3, shift in -2.0f64..2.0) {
        let mut moved = z.clone();
        moved.mapv_inplace(|x| x + shift);
        if z.ncols() >= 2 {
            let (c, s) = (angle.cos(), angle.sin());
            for mut row in moved.rows_mut() {
                let (x, y) = (row[0], row[1]);
                row[0] = c * x - s * y;
                row[1] = s * x + c * y;
            }
        }
        let a = outcome_probabilities(&trial, z.view(), beta).unwrap();
        let b = outcome_probabilities(&trial, moved.view(), beta).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn encode_decode_round_trip(r in 2usize..9, pick in any::<prop::sample::Index>(), c_pick in any::<prop::sample::Index>()) {
        let c = 1 + c_pick.index(r - 1);
        let k = n_permutations(r, c);
        let outcome = OutcomeIndex(pick.index(k));
        let tuple = decode_outcome(r, c, outcome).unwrap();
        prop_assert_eq!(encode_outcome(r, c, &tuple).unwrap(), outcome);
    }

    #[test]
    fn weights_scale_log_likelihood((trial, z, beta) in instance(), w in 0.0f64..3.0, pick in any::<prop::sample::Index>()) {
        let outcome = OutcomeIndex(pick.index(trial.n_outcomes()));
        let obs = Observation::new(trial.clone(), outcome);
        let one = weighted_log_likelihood(std::slice::from_ref(&obs), z.view(), beta).unwrap();
        let scaled = weighted_log_likelihood(&[obs.with_weight(w)], z.view(), beta).unwrap();
        prop_assert!((scaled - w * one).abs() <= 1e-9 * (1.0 + one.abs()));
    }
}
