//! Compares the active and random policies on the 40 x 10 budget protocol
//! for one selection mix over a range of seeds.
//!
//! `cargo run --release -p hsj --example active_pilot -- NEIGHBORHOOD CONFIRMATION KEEP QUERIES FIRST_SEED END_SEED`

use anyhow::{ensure, Context};
use hsj_core::active::{make_confirmation_trials, random_trials, select_trials, Neighborhood, QueryUsageCounter, SelectionConfig};
use hsj_core::inference::fit_ensemble;
use hsj_core::metrics::coarse_loss;
use hsj_core::oracle::{random_truth, Oracle, OracleConfig};
use hsj_core::seed::{derive_seed, rng_from};
use hsj_core::{FitConfig, Trial};

const N: usize = 30;
const PER_ITERATION: usize = 40;
const ITERATIONS: u32 = 10;

#[derive(Clone, Copy)]
struct Mix {
    neighborhood: usize,
    confirmation: usize,
    keep: usize,
    queries: usize,
}

fn run(seed: u64, mix: Option<Mix>) -> anyhow::Result<f64> {
    let active = mix.is_some();
    let truth = random_truth(N, 2, 0.2, &mut rng_from(derive_seed(500, &[seed])));
    let test_trials = random_trials(N, 1000, 8, 2, &mut rng_from(derive_seed(501, &[seed])))?;
    let oracle = |s| Oracle::new(OracleConfig { seed: s, ..OracleConfig::new(truth.clone()) });
    let test = oracle(derive_seed(502, &[seed]))?.observe_all(&test_trials)?;
    let mut judge = oracle(derive_seed(503, &[seed]))?;
    let mut rng = rng_from(derive_seed(504, &[seed, active as u64]));
    let fit = |iteration: u32| FitConfig {
        d_candidates: vec![2],
        seed: derive_seed(505, &[seed, active as u64, iteration as u64]),
        ..FitConfig::default()
    };
    let cold_start = random_trials(N, PER_ITERATION, 8, 2, &mut rng_from(derive_seed(508, &[seed])))?;
    let mut observations = judge.observe_all(&cold_start)?;
    let mut ensemble = fit_ensemble(&observations, N, 2, &fit(0), None, 0)?;
    let mut counter = QueryUsageCounter::new();
    for t in 1..ITERATIONS {
        let trials = match mix {
            Some(m) => {
                let selection = SelectionConfig {
                    n_queries: m.queries,
                    candidates_per_query: 500,
                    keep_per_query: m.keep,
                    n_confirmation: m.confirmation,
                    neighborhood: Neighborhood::Count(m.neighborhood),
                    seed: derive_seed(506, &[seed, t as u64]),
                    ..SelectionConfig::default()
                };
                let mut trials: Vec<Trial> = select_trials(&ensemble, &mut counter, &selection)?
                    .into_iter()
                    .map(|c| c.trial)
                    .collect();
                trials.extend(make_confirmation_trials(&ensemble, &mut counter, &selection, &mut rng)?);
                trials
            }
            None => random_trials(N, PER_ITERATION, 8, 2, &mut rng)?,
        };
        ensure!(trials.len() == PER_ITERATION, "iteration {t} produced {} trials", trials.len());
        observations.extend(judge.observe_all(&trials)?);
        ensemble = fit_ensemble(&observations, N, 2, &fit(t), Some(&ensemble), t)?;
    }
    Ok(coarse_loss(&ensemble, &test, 64, &mut rng_from(derive_seed(507, &[seed])))?)
}

fn main() -> anyhow::Result<()> {
    let args: Vec<u64> = std::env::args()
        .skip(1)
        .map(|s| s.parse().context("arguments are non-negative integers"))
        .collect::<anyhow::Result<_>>()?;
    ensure!(args.len() == 6, "expected NEIGHBORHOOD CONFIRMATION KEEP QUERIES FIRST_SEED END_SEED");
    let mix = Mix {
        neighborhood: args[0] as usize,
        confirmation: args[1] as usize,
        keep: args[2] as usize,
        queries: args[3] as usize,
    };
    let mut wins = 0;
    for seed in args[4]..args[5] {
        let a = run(seed, Some(mix))?;
        let r = run(seed, None)?;
        wins += (a <= r) as u32;
        println!("seed {seed} active {a:.4} random {r:.4}");
    }
    println!("wins {wins}/{}", args[5] - args[4]);
    Ok(())
}
