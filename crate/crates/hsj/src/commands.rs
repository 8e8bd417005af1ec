//! Subcommand implementations. Each returns a JSON summary for stdout.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use hsj_core::active::{make_confirmation_trials, random_trials, select_trials, QueryUsageCounter, SelectedTrial, TrialOrigin};
use hsj_core::inference::{fit_ensemble, select_dimensionality};
use hsj_core::metrics::{
    embedding_correlation, expand_all, triplet_accuracy, ExpectedSimilarity, FeatureMatrix, MetricReport,
};
use hsj_core::oracle::worker_pool;
use hsj_core::quality::build_sessions;
use hsj_core::seed::{derive_seed, rng_from};
use hsj_core::service::{IterationReport, Pipeline};
use hsj_core::stats::spearman_trend_test;
use hsj_core::store::{read_json, read_jsonl, write_json, write_jsonl, Catalog, EnsembleDocument};
use hsj_core::{Observation, Trial};
use serde_json::{json, Value};

use crate::client::OracleClient;
use crate::config::{Config, ServeMode};
use crate::server::{router, spawn_scheduler, Shared};
use crate::world::{load_or_create_truth, make_crowd, make_oracle};

fn catalog_or_synthetic(path: Option<&Path>, n: usize) -> anyhow::Result<Catalog> {
    match path {
        Some(p) => {
            let c: Catalog = read_json(p)?;
            c.validate()?;
            Ok(c)
        }
        None => Ok(Catalog::synthetic(n)),
    }
}

/// Draws a ground truth and judges random trials with the oracle.
pub fn simulate(config: &Config, out: &Path) -> anyhow::Result<Value> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let truth = load_or_create_truth(config, out)?;
    let catalog = Catalog::synthetic(truth.n());
    write_json(&out.join("catalog.json"), &catalog)?;
    let mut rng = rng_from(derive_seed(config.seed, &[0x51]));
    let trials = random_trials(
        truth.n(),
        config.simulate.n_trials,
        hsj_core::active::TRIAL_REFERENCES,
        hsj_core::active::TRIAL_SELECT,
        &mut rng,
    )?;
    let observations = make_oracle(config, &truth, 0)?.observe_all(&trials)?;
    let path = out.join("observations.jsonl");
    write_jsonl(&path, &observations)?;
    Ok(json!({
        "n": truth.n(),
        "d": truth.d(),
        "observations": observations.len(),
        "files": [out.join("truth.json"), out.join("catalog.json"), path],
    }))
}

/// Fits an ensemble with dimensionality search.
pub fn infer(config: &Config, observations: &Path, catalog: Option<&Path>, out: &Path) -> anyhow::Result<Value> {
    let obs: Vec<Observation> = read_jsonl(observations)?;
    let catalog = catalog_or_synthetic(catalog, config.truth.n)?;
    let n = catalog.len();
    let search = select_dimensionality(&obs, n, &config.pipeline.fit, 0)?;
    let ensemble = match search.ensemble {
        Some(e) => e,
        None => fit_ensemble(&obs, n, search.chosen, &config.pipeline.fit, None, 0)?,
    };
    write_json(out, &EnsembleDocument::from_ensemble(&ensemble, &catalog.ids())?)?;
    Ok(json!({
        "observations": obs.len(),
        "d": ensemble.d(),
        "dimension_losses": search.losses,
        "val_loss": ensemble.val_loss(),
        "ensemble": out,
    }))
}

fn load_ensemble(path: &Path) -> anyhow::Result<hsj_core::Ensemble> {
    let doc: EnsembleDocument = read_json(path)?;
    Ok(doc.to_ensemble()?)
}

/// Selects information-gain and confirmation trials from a fitted ensemble.
pub fn select(config: &Config, ensemble: &Path, history: &[PathBuf], out: &Path) -> anyhow::Result<Value> {
    let ensemble = load_ensemble(ensemble)?;
    let mut counter = QueryUsageCounter::new();
    for h in history {
        let trials: Vec<Trial> = read_jsonl(h)?;
        counter.record(&trials);
    }
    let selection = &config.pipeline.selection;
    let iteration = ensemble.iteration() + 1;
    let ig = select_trials(&ensemble, &mut counter, selection)?;
    let mut rng = rng_from(derive_seed(config.seed, &[0x5e1]));
    let confirmation = make_confirmation_trials(&ensemble, &mut counter, selection, &mut rng)?;
    let mut selected: Vec<SelectedTrial> = ig
        .iter()
        .map(|c| SelectedTrial {
            trial: c.trial.clone(),
            origin: TrialOrigin::Ig,
            iteration,
        })
        .collect();
    selected.extend(confirmation.into_iter().map(|trial| SelectedTrial {
        trial,
        origin: TrialOrigin::Confirmation,
        iteration,
    }));
    write_jsonl(out, &selected)?;
    let mean_ig = ig.iter().map(|c| c.ig).sum::<f64>() / ig.len().max(1) as f64;
    Ok(json!({
        "ig_trials": ig.len(),
        "confirmation_trials": selected.len() - ig.len(),
        "mean_ig": mean_ig,
        "trials": out,
    }))
}

/// Packs trials into sessions with catch trials.
pub fn sessions(config: &Config, trials: &Path, prefix: &str, out: &Path) -> anyhow::Result<Value> {
    let trials: Vec<Trial> = read_jsonl(trials)?;
    let mut rng = rng_from(derive_seed(config.seed, &[0x5e5]));
    let sessions = build_sessions(
        &trials,
        config.pipeline.session_size,
        config.pipeline.catches_per_session,
        prefix,
        &mut rng,
    )?;
    write_json(out, &sessions)?;
    Ok(json!({ "trials": trials.len(), "sessions": sessions.len(), "plan": out }))
}

fn features_for(path: &Path, catalog: Option<&Path>) -> anyhow::Result<hsj_core::metrics::FeatureMatrix> {
    let features = FeatureMatrix::from_csv(path)?;
    match catalog {
        None => Ok(features),
        Some(c) => {
            let catalog = catalog_or_synthetic(Some(c), 0)?;
            let ids = catalog.ids();
            let values = features.aligned(&ids)?;
            Ok(FeatureMatrix::new(ids, values)?)
        }
    }
}

/// Triplet accuracy of a feature representation on stored judgments.
pub fn eval_triplets(config: &Config, observations: &Path, features: &Path, catalog: Option<&Path>) -> anyhow::Result<Value> {
    let obs: Vec<Observation> = read_jsonl(observations)?;
    let features = features_for(features, catalog)?;
    let triplets = expand_all(&obs)?;
    let reports = config
        .eval
        .distances
        .iter()
        .map(|&distance| {
            Ok(MetricReport {
                metric: "triplet_accuracy".into(),
                value: triplet_accuracy(features.values.view(), &triplets, distance)?,
                config: json!({ "distance": distance, "triplets": triplets.len() }),
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(serde_json::to_value(reports)?)
}

/// Spearman correlation between feature similarities and the ensemble's
/// expected similarities.
pub fn eval_corr(config: &Config, ensemble: &Path, features: &Path, catalog: Option<&Path>) -> anyhow::Result<Value> {
    let ensemble = load_ensemble(ensemble)?;
    let features = features_for(features, catalog)?;
    let psych = ensemble.expected_similarity(config.eval.mc_samples, derive_seed(config.seed, &[0xc0]))?;
    let reports = config
        .eval
        .similarities
        .iter()
        .map(|&sim| {
            Ok(MetricReport {
                metric: "embedding_correlation".into(),
                value: embedding_correlation(features.values.view(), &psych, sim)?,
                config: json!({ "similarity": sim, "mc_samples": config.eval.mc_samples }),
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(serde_json::to_value(reports)?)
}

/// Trend tests over a run of iteration reports: coarse loss should fall and
/// both agreements should rise.
pub fn convergence_summary(reports: &[IterationReport]) -> anyhow::Result<Value> {
    let coarse: Vec<f64> = reports.iter().filter_map(|r| r.coarse_loss).map(|l| -l).collect();
    let within: Vec<f64> = reports.iter().map(|r| r.within_ensemble_agreement).collect();
    let consecutive: Vec<f64> = reports.iter().filter_map(|r| r.consecutive_ensemble_agreement).collect();
    let trend = |v: &[f64]| -> Value {
        match spearman_trend_test(v) {
            Ok(t) => serde_json::to_value(t).unwrap_or(Value::Null),
            Err(_) => Value::Null,
        }
    };
    Ok(json!({
        "iterations": reports.len(),
        "coarse_loss_decreasing": trend(&coarse),
        "within_agreement_increasing": trend(&within),
        "consecutive_agreement_increasing": trend(&consecutive),
        "reports": reports,
    }))
}

fn open_pipeline(config: &Config, catalog: Catalog) -> anyhow::Result<Pipeline> {
    Ok(Pipeline::open(&config.data_dir, catalog, config.pipeline.clone())?)
}

/// Runs the active-learning loop with an in-process simulated crowd.
pub fn converge(config: &Config) -> anyhow::Result<Value> {
    std::fs::create_dir_all(&config.data_dir)?;
    let truth = load_or_create_truth(config, &config.data_dir)?;
    let mut pipeline = open_pipeline(config, Catalog::synthetic(truth.n()))?;
    pipeline.ensure_coarse_set(config.converge.coarse_set, &mut make_oracle(config, &truth, 2)?)?;
    let mut crowd = make_crowd(config, &truth)?;
    while pipeline.next_iteration() < config.converge.iterations {
        pipeline.run_iteration(&mut crowd)?;
    }
    let reports = (0..config.converge.iterations)
        .map(|t| pipeline.load_report(t)?.context("missing report"))
        .collect::<anyhow::Result<Vec<_>>>()?;
    convergence_summary(&reports)
}

/// Runs the collection service. In oracle mode a loopback client judges
/// every session over HTTP and the command returns once the target number
/// of iterations exists; in human mode it serves until interrupted.
pub async fn serve(config: &Config, catalog: Option<&Path>) -> anyhow::Result<Value> {
    std::fs::create_dir_all(&config.data_dir)?;
    let serve = &config.serve;
    let (catalog, truth) = match serve.mode {
        ServeMode::Oracle => {
            let truth = load_or_create_truth(config, &config.data_dir)?;
            (Catalog::synthetic(truth.n()), Some(truth))
        }
        ServeMode::Human => (catalog_or_synthetic(catalog, config.truth.n)?, None),
    };
    let pipeline = open_pipeline(config, catalog.clone())?;
    if let Some(truth) = &truth {
        pipeline.ensure_coarse_set(serve.coarse_set, &mut make_oracle(config, truth, 2)?)?;
    }
    let bind = match serve.mode {
        ServeMode::Oracle => "127.0.0.1:0".parse()?,
        ServeMode::Human => serve.bind,
    };
    let listener = tokio::net::TcpListener::bind(bind).await?;
    let addr = listener.local_addr()?;
    let shared = Shared::new(serve.iterations);
    let scheduler = spawn_scheduler(
        shared.clone(),
        pipeline,
        serve.iterations,
        Duration::from_secs(serve.lease_minutes * 60),
    );
    let app = router(shared.clone());
    let server = tokio::spawn(async move { axum::serve(listener, app).await });

    let Some(truth) = truth else {
        eprintln!("listening on http://{addr}");
        tokio::signal::ctrl_c().await?;
        shared.shutdown();
        server.abort();
        return Ok(json!({ "address": addr.to_string(), "status": shared.status() }));
    };

    let workers = worker_pool(config.oracle.workers, &config.oracle.worker_accuracies);
    let mut client = OracleClient::new(format!("http://{addr}"), &catalog, make_oracle(config, &truth, 1)?, workers);
    let outcome = client.run().await;
    shared.shutdown();
    server.abort();
    let scheduled = tokio::task::spawn_blocking(move || scheduler.join())
        .await?
        .map_err(|_| anyhow::anyhow!("scheduler thread panicked"))?;
    let stats = outcome?;
    scheduled?;
    let pipeline = open_pipeline(config, catalog)?;
    let reports = (0..serve.iterations)
        .map(|t| pipeline.load_report(t)?.context("missing report"))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(json!({
        "address": addr.to_string(),
        "client": stats,
        "summary": convergence_summary(&reports)?,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulate_then_infer() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = Config::default();
        config.truth.n = 10;
        config.simulate.n_trials = 200;
        config.pipeline.fit.d_candidates = vec![2];
        config.pipeline.fit.max_epochs = 50;
        config.pipeline.fit.restarts = 1;
        let summary = simulate(&config, dir.path()).unwrap();
        assert_eq!(summary["observations"], 200);
        let out = dir.path().join("ensemble.json");
        let summary = infer(&config, &dir.path().join("observations.jsonl"), None, &out).unwrap();
        assert_eq!(summary["d"], 2);
        assert!(load_ensemble(&out).unwrap().members().len() == 3);
    }
}
