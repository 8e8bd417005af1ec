//! Regenerates `tests/fixtures/recovery_pilot.json`: recovery r^2 over
//! pilot seeds disjoint from the acceptance run.

use hsj_core::active::random_trials;
use hsj_core::inference::fit_ensemble;
use hsj_core::metrics::{pearson_upper, point_similarity_matrix, ExpectedSimilarity};
use hsj_core::oracle::{random_truth, Oracle, OracleConfig};
use hsj_core::seed::{derive_seed, rng_from};
use hsj_core::store::write_json;
use hsj_core::FitConfig;
use serde_json::json;

const THRESHOLD: f64 = 0.8;

fn main() -> anyhow::Result<()> {
    let mut runs = Vec::new();
    for seed in 0..5u64 {
        let truth = random_truth(30, 2, 0.2, &mut rng_from(derive_seed(400, &[seed])));
        let trials = random_trials(30, 3000, 8, 2, &mut rng_from(derive_seed(401, &[seed])))?;
        let mut oracle = Oracle::new(OracleConfig {
            seed: derive_seed(402, &[seed]),
            ..OracleConfig::new(truth.clone())
        })?;
        let observations = oracle.observe_all(&trials)?;
        let config = FitConfig {
            seed: derive_seed(403, &[seed]),
            ..FitConfig::default()
        };
        let ensemble = fit_ensemble(&observations, 30, 2, &config, None, 0)?;
        let r = pearson_upper(&ensemble.expected_similarity(64, seed)?, &point_similarity_matrix(truth.view(), 10.0)?)?;
        println!("seed {seed}: r^2 = {:.4}", r * r);
        runs.push(json!({ "seed": seed, "r2": r * r }));
    }
    let min = runs.iter().filter_map(|r| r["r2"].as_f64()).fold(f64::INFINITY, f64::min);
    let fixture = json!({
        "n": 30, "d": 2, "beta": 10.0, "truth_scale": 0.2, "trials": 3000,
        "runs": runs, "min_r2": min, "threshold": THRESHOLD,
    });
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/recovery_pilot.json");
    write_json(&path, &fixture)?;
    anyhow::ensure!(min >= THRESHOLD, "pilot minimum {min:.4} is below the threshold");
    Ok(())
}
