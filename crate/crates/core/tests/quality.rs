use std::collections::HashMap;

use hsj_core::quality::{
    build_sessions, finalize_observations, grade_catch, grade_session, Classification, Judgment, SessionSlot,
    CATCH_WINDOW, MIN_DURATION_S,
};
use hsj_core::seed::rng_from;
use hsj_core::{OutcomeIndex, Trial};
use proptest::prelude::*;

fn content(count: usize, n: usize) -> Vec<Trial> {
    (0..count)
        .map(|i| {
            let q = i % n;
            let shift = 1 + i / n % (n - 8);
            let refs: Vec<usize> = (0..8).map(|k| (q + shift + k) % n).collect();
            Trial::rank2(q, &refs).unwrap()
        })
        .collect()
}

#[test]
fn catch_grades_cover_every_outcome() {
    for mirror in 0..8 {
        let mut counts = HashMap::new();
        for k in 0..56 {
            let g = grade_catch(OutcomeIndex(k), mirror).unwrap();
            *counts.entry((g * 2.0) as u32).or_insert(0) += 1;
        }
        assert_eq!(counts[&2], 7, "mirror ranked first");
        assert_eq!(counts[&1], 7, "mirror ranked second");
        assert_eq!(counts[&0], 42);
    }
    assert!(grade_catch(OutcomeIndex(0), 8).is_err());
    assert!(grade_catch(OutcomeIndex(56), 0).is_err());
}

#[test]
fn classification_boundaries() {
    assert_eq!(Classification::from_grade(1.0), Classification::Premium);
    assert_eq!(Classification::from_grade(0.875), Classification::Satisfactory);
    assert_eq!(Classification::from_grade(0.5), Classification::Satisfactory);
    assert_eq!(Classification::from_grade(0.375), Classification::Unsatisfactory);
    assert!(Classification::Premium.keeps_worker_eligible());
    assert!(!Classification::Satisfactory.keeps_worker_eligible());
    assert!(Classification::Satisfactory.is_retained());
    assert!(!Classification::Unsatisfactory.is_retained());
}

/// Judges every slot; catch `i` gets the grade in `grades[i]`.
fn judge_all(session: &mut hsj_core::quality::Session, grades: [f64; 4], duration: f64) {
    let mut c = 0;
    for pos in 0..session.len() {
        let outcome = match &session.trials[pos] {
            SessionSlot::Catch { catch } => {
                let m = catch.mirror_position();
                let other = (m + 1) % 8;
                let third = (m + 2) % 8;
                let positions = match grades[c] {
                    g if g == 1.0 => [m, other],
                    g if g == 0.5 => [other, m],
                    _ => [other, third],
                };
                c += 1;
                catch.base().encode(&positions).unwrap()
            }
            SessionSlot::Content { trial } => trial.encode(&[0, 1]).unwrap(),
        };
        session.record(pos, Judgment { outcome, duration_s: duration }).unwrap();
    }
}

#[test]
fn grade_is_mean_of_catch_grades() {
    let cases = [
        ([1.0, 1.0, 1.0, 1.0], Classification::Premium),
        ([1.0, 1.0, 1.0, 0.5], Classification::Satisfactory),
        ([1.0, 0.5, 0.0, 0.5], Classification::Satisfactory),
        ([0.5, 0.0, 0.5, 0.5], Classification::Unsatisfactory),
    ];
    for (grades, want) in cases {
        let mut s = build_sessions(&content(46, 20), 50, 4, "g", &mut rng_from(3)).unwrap().remove(0);
        judge_all(&mut s, grades, 2.0);
        let (grade, class) = grade_session(&mut s).unwrap();
        assert!((grade - grades.iter().sum::<f64>() / 4.0).abs() < 1e-15);
        assert_eq!(class, want);
        let obs = finalize_observations(&s);
        if want.is_retained() {
            let obs = obs.unwrap();
            assert_eq!(obs.len(), 46);
            assert!(obs.iter().all(|o| o.weight == grade && !o.is_catch));
        } else {
            assert!(obs.is_err());
        }
    }
}

#[test]
fn fast_judgments_are_dropped() {
    let mut s = build_sessions(&content(46, 20), 50, 4, "f", &mut rng_from(4)).unwrap().remove(0);
    judge_all(&mut s, [1.0; 4], MIN_DURATION_S - 0.01);
    grade_session(&mut s).unwrap();
    assert!(finalize_observations(&s).unwrap().is_empty());
}

#[test]
fn partial_sessions_cannot_be_graded() {
    let mut s = build_sessions(&content(46, 20), 50, 4, "p", &mut rng_from(5)).unwrap().remove(0);
    let outcome = s.trials[0].trial().encode(&[0, 1]).unwrap();
    s.record(0, Judgment { outcome, duration_s: 2.0 }).unwrap();
    assert!(grade_session(&mut s).is_err());
    assert!(s.record(0, Judgment { outcome, duration_s: 2.0 }).is_err());
}

#[test]
fn uneven_trial_counts_are_rejected() {
    assert!(build_sessions(&content(45, 20), 50, 4, "x", &mut rng_from(0)).is_err());
    assert!(build_sessions(&[], 50, 4, "x", &mut rng_from(0)).is_err());
    assert!(build_sessions(&content(46, 20), 50, 3, "x", &mut rng_from(0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sessions_partition_content(k in 1usize..6, seed in any::<u64>()) {
        let trials = content(46 * k, 40);
        let sessions = build_sessions(&trials, 50, 4, "s", &mut rng_from(seed)).unwrap();
        prop_assert_eq!(sessions.len(), k);

        let mut want: HashMap<_, usize> = HashMap::new();
        for t in &trials {
            *want.entry(t.canonical_key()).or_default() += 1;
        }
        let mut got: HashMap<_, usize> = HashMap::new();
        for s in &sessions {
            prop_assert_eq!(s.len(), 50);
            prop_assert_eq!(s.catch_positions.len(), 4);
            let early = s.catch_positions.iter().filter(|&&p| p < CATCH_WINDOW).count();
            let late = s.catch_positions.iter().filter(|&&p| p >= 50 - CATCH_WINDOW).count();
            prop_assert_eq!((early, late), (2, 2));
            let own: Vec<&Trial> = s
                .trials
                .iter()
                .filter_map(|slot| match slot {
                    SessionSlot::Content { trial } => Some(trial),
                    _ => None,
                })
                .collect();
            prop_assert_eq!(own.len(), 46);
            for (pos, slot) in s.trials.iter().enumerate() {
                prop_assert_eq!(slot.is_catch(), s.catch_positions.contains(&pos));
                if let SessionSlot::Catch { catch } = slot {
                    prop_assert!(own.contains(&catch.base()));
                    prop_assert!(catch.mirror_position() < 8);
                }
            }
            for t in own {
                *got.entry(t.canonical_key()).or_default() += 1;
            }
        }
        prop_assert_eq!(got, want);
    }
}
