//! Simulated ground truth, oracle and worker pool built from a [`Config`].

use std::path::{Path, PathBuf};

use hsj_core::oracle::{random_truth, worker_pool, Oracle, OracleConfig};
use hsj_core::seed::{derive_seed, rng_from};
use hsj_core::service::OracleCrowd;
use hsj_core::store::{read_json, write_json, Catalog, EmbeddingDocument};
use hsj_core::EmbeddingPosterior;

use crate::config::Config;

pub fn truth_path(dir: &Path) -> PathBuf {
    dir.join("truth.json")
}

/// Loads the ground truth stored in `dir`, or draws and stores a new one.
pub fn load_or_create_truth(config: &Config, dir: &Path) -> anyhow::Result<EmbeddingPosterior> {
    let path = truth_path(dir);
    if path.exists() {
        let doc: EmbeddingDocument = read_json(&path)?;
        let truth = doc.to_posterior()?;
        anyhow::ensure!(
            truth.n() == config.truth.n,
            "{} holds {} stimuli but the config asks for {}",
            path.display(),
            truth.n(),
            config.truth.n
        );
        return Ok(truth);
    }
    let t = &config.truth;
    let mut rng = rng_from(derive_seed(config.seed, &[0x7e0]));
    let truth = EmbeddingPosterior::point(random_truth(t.n, t.d, t.scale, &mut rng), t.beta)?;
    write_json(&path, &EmbeddingDocument::from_posterior(&truth, Catalog::synthetic(t.n).ids())?)?;
    Ok(truth)
}

/// An oracle over `truth`; distinct `stream`s give independent judges.
pub fn make_oracle(config: &Config, truth: &EmbeddingPosterior, stream: u64) -> anyhow::Result<Oracle> {
    Ok(Oracle::new(OracleConfig {
        beta: truth.beta(),
        mode: config.oracle.mode,
        duration_s: config.oracle.duration_s,
        seed: derive_seed(config.seed, &[0x0a, stream]),
        ..OracleConfig::new(truth.mu().to_owned())
    })?)
}

pub fn make_crowd(config: &Config, truth: &EmbeddingPosterior) -> anyhow::Result<OracleCrowd> {
    let workers = worker_pool(config.oracle.workers, &config.oracle.worker_accuracies);
    Ok(OracleCrowd::new(make_oracle(config, truth, 1)?, workers)?)
}
