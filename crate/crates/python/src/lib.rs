//! Python bindings: trials, the Luce likelihood, the simulated oracle,
//! ensemble fitting, trial selection, session collection and metrics.

use std::collections::BTreeSet;
use std::time::Instant;

use hsj_core::active::{
    ensemble_information_gain, make_confirmation_trials, random_trials as core_random_trials,
    select_trials as core_select_trials, Neighborhood, QueryUsageCounter, SelectionConfig, TRIAL_REFERENCES,
    TRIAL_SELECT,
};
use hsj_core::inference::{fit_ensemble, select_dimensionality};
use hsj_core::metrics::{expand_all, triplet_accuracy as core_triplet_accuracy, Distance, ExpectedSimilarity};
use hsj_core::model::outcome_probabilities as core_outcome_probabilities;
use hsj_core::oracle::{random_truth as core_random_truth, JudgeMode, OracleConfig};
use hsj_core::quality::build_sessions;
use hsj_core::seed::{derive_seed, rng_from};
use hsj_core::service::{CollectError, Collector as CoreCollector, SubmitResponse};
use hsj_core::store::{Catalog, EnsembleDocument};
use hsj_core::{stats, FitConfig, OutcomeIndex, StimulusId};
use ndarray::Array2;
use pyo3::exceptions::{PyKeyError, PyPermissionError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: hsj_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn collect_err(e: CollectError) -> PyErr {
    match e {
        CollectError::Ineligible(_) => PyPermissionError::new_err(e.to_string()),
        CollectError::NotFound(_) => PyKeyError::new_err(e.to_string()),
        CollectError::NoSessions | CollectError::Conflict(_) => PyRuntimeError::new_err(e.to_string()),
        CollectError::Validation(_) => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows must have equal length"));
    }
    Array2::from_shape_vec((n, d), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(a: ndarray::ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// A ranked similarity trial: a query, its references and the number of
/// references to choose.
#[pyclass(frozen, eq, from_py_object, module = "pyhsj")]
#[derive(Clone, PartialEq)]
struct Trial(hsj_core::Trial);

#[pymethods]
impl Trial {
    #[new]
    #[pyo3(signature = (query, references, n_select = 2))]
    fn new(query: usize, references: Vec<usize>, n_select: usize) -> PyResult<Self> {
        let refs = references.into_iter().map(StimulusId).collect();
        hsj_core::Trial::new(StimulusId(query), refs, n_select).map(Trial).map_err(err)
    }

    #[getter]
    fn query(&self) -> usize {
        self.0.query().index()
    }

    #[getter]
    fn references(&self) -> Vec<usize> {
        self.0.references().iter().map(|r| r.index()).collect()
    }

    #[getter]
    fn n_select(&self) -> usize {
        self.0.n_select()
    }

    #[getter]
    fn n_outcomes(&self) -> usize {
        self.0.n_outcomes()
    }

    /// Reference positions chosen by outcome index, most similar first.
    fn decode(&self, outcome: usize) -> PyResult<Vec<usize>> {
        self.0.decode(OutcomeIndex(outcome)).map_err(err)
    }

    fn encode(&self, positions: Vec<usize>) -> PyResult<usize> {
        self.0.encode(&positions).map(|o| o.0).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Trial(query={}, references={:?}, n_select={})", self.query(), self.references(), self.n_select())
    }
}

/// One judged trial with its weight.
#[pyclass(frozen, from_py_object, module = "pyhsj")]
#[derive(Clone)]
struct Observation(hsj_core::Observation);

#[pymethods]
impl Observation {
    #[new]
    #[pyo3(signature = (trial, outcome, weight = 1.0))]
    fn new(trial: Trial, outcome: usize, weight: f64) -> PyResult<Self> {
        let obs = hsj_core::Observation::new(trial.0, OutcomeIndex(outcome)).with_weight(weight);
        obs.validate().map_err(err)?;
        Ok(Observation(obs))
    }

    #[getter]
    fn trial(&self) -> Trial {
        Trial(self.0.trial.clone())
    }

    #[getter]
    fn outcome(&self) -> usize {
        self.0.outcome.0
    }

    #[getter]
    fn weight(&self) -> f64 {
        self.0.weight
    }

    #[getter]
    fn session_id(&self) -> String {
        self.0.session_id.clone()
    }

    #[getter]
    fn slot(&self) -> Option<usize> {
        self.0.slot
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let obs: hsj_core::Observation = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        obs.validate().map_err(err)?;
        Ok(Observation(obs))
    }
}

/// Probabilities of every outcome of `trial` under the ranked Luce model
/// with embedding rows `z`, in outcome-index order.
#[pyfunction]
#[pyo3(signature = (trial, z, beta = 10.0))]
fn outcome_probabilities(trial: &Trial, z: Vec<Vec<f64>>, beta: f64) -> PyResult<Vec<f64>> {
    core_outcome_probabilities(&trial.0, matrix(z)?.view(), beta).map_err(err)
}

/// Gaussian ground-truth coordinates.
#[pyfunction]
#[pyo3(signature = (n, d, scale = 0.2, seed = 0))]
fn random_truth(n: usize, d: usize, scale: f64, seed: u64) -> Vec<Vec<f64>> {
    rows(core_random_truth(n, d, scale, &mut rng_from(seed)).view())
}

/// Uniformly random trials over `n` stimuli.
#[pyfunction]
#[pyo3(signature = (n, count, seed = 0, n_references = TRIAL_REFERENCES, n_select = TRIAL_SELECT))]
fn random_trials(n: usize, count: usize, seed: u64, n_references: usize, n_select: usize) -> PyResult<Vec<Trial>> {
    let trials = core_random_trials(n, count, n_references, n_select, &mut rng_from(seed)).map_err(err)?;
    Ok(trials.into_iter().map(Trial).collect())
}

/// Simulated judge answering from a known embedding.
#[pyclass(module = "pyhsj")]
struct Oracle(hsj_core::oracle::Oracle);

#[pymethods]
impl Oracle {
    #[new]
    #[pyo3(signature = (truth, beta = 10.0, seed = 0, deterministic = false, catch_accuracy = 1.0))]
    fn new(truth: Vec<Vec<f64>>, beta: f64, seed: u64, deterministic: bool, catch_accuracy: f64) -> PyResult<Self> {
        let config = OracleConfig {
            beta,
            seed,
            catch_accuracy,
            mode: if deterministic { JudgeMode::Deterministic } else { JudgeMode::Stochastic },
            ..OracleConfig::new(matrix(truth)?)
        };
        hsj_core::oracle::Oracle::new(config).map(Oracle).map_err(err)
    }

    fn judge(&mut self, trial: &Trial) -> PyResult<usize> {
        self.0.judge(&trial.0).map(|o| o.0).map_err(err)
    }

    fn observe(&mut self, trial: &Trial) -> PyResult<Observation> {
        self.0.observe(&trial.0).map(Observation).map_err(err)
    }

    fn observe_all(&mut self, trials: Vec<Trial>) -> PyResult<Vec<Observation>> {
        trials.iter().map(|t| self.observe(t)).collect()
    }
}

/// Three variational posteriors fitted on different holdout splits.
#[pyclass(frozen, module = "pyhsj")]
struct Ensemble(hsj_core::Ensemble);

#[pymethods]
impl Ensemble {
    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.0.d()
    }

    #[getter]
    fn val_loss(&self) -> Vec<f64> {
        self.0.val_loss().to_vec()
    }

    /// Posterior means of every member.
    fn means(&self) -> Vec<Vec<Vec<f64>>> {
        self.0.members().iter().map(|m| rows(m.mu())).collect()
    }

    /// Posterior variances of every member.
    fn variances(&self) -> Vec<Vec<Vec<f64>>> {
        self.0.members().iter().map(|m| rows(m.sigma2())).collect()
    }

    /// Expected pairwise similarity, averaged over members.
    #[pyo3(signature = (mc_samples = 64, seed = 0))]
    fn expected_similarity(&self, mc_samples: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let m = self.0.expected_similarity(mc_samples, seed).map_err(err)?;
        Ok(rows(m.values()))
    }

    /// Ensemble-average expected information gain of one trial.
    #[pyo3(signature = (trial, mc_samples = 64, seed = 0))]
    fn information_gain(&self, trial: &Trial, mc_samples: usize, seed: u64) -> PyResult<f64> {
        ensemble_information_gain(&trial.0, &self.0, mc_samples, &mut rng_from(seed)).map_err(err)
    }

    /// Information-gain trials followed by confirmation trials.
    #[pyo3(signature = (n_queries = 10, candidates_per_query = 100, keep_per_query = 2, n_confirmation = 0, neighborhood = None, mc_samples = 64, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn select_trials(
        &self,
        n_queries: usize,
        candidates_per_query: usize,
        keep_per_query: usize,
        n_confirmation: usize,
        neighborhood: Option<usize>,
        mc_samples: usize,
        seed: u64,
    ) -> PyResult<Vec<(Trial, Option<f64>)>> {
        let config = SelectionConfig {
            n_queries,
            candidates_per_query,
            keep_per_query,
            n_confirmation,
            neighborhood: neighborhood.map_or_else(Neighborhood::default, Neighborhood::Count),
            ig_mc_samples: mc_samples,
            seed,
        };
        let mut counter = QueryUsageCounter::new();
        let ig = core_select_trials(&self.0, &mut counter, &config).map_err(err)?;
        let mut out: Vec<(Trial, Option<f64>)> = ig.into_iter().map(|c| (Trial(c.trial), Some(c.ig))).collect();
        if n_confirmation > 0 {
            let mut rng = rng_from(derive_seed(seed, &[0x5e1]));
            let extra = make_confirmation_trials(&self.0, &mut counter, &config, &mut rng).map_err(err)?;
            out.extend(extra.into_iter().map(|t| (Trial(t), None)));
        }
        Ok(out)
    }

    fn to_json(&self) -> PyResult<String> {
        let ids = Catalog::synthetic(self.0.n()).ids();
        let doc = EnsembleDocument::from_ensemble(&self.0, &ids).map_err(err)?;
        serde_json::to_string(&doc).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let doc: EnsembleDocument = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        doc.to_ensemble().map(Ensemble).map_err(err)
    }
}

/// Fits an ensemble. Without `d`, the dimensionality is chosen among
/// `d_candidates` by holdout loss.
#[pyfunction]
#[pyo3(signature = (observations, n, d = None, d_candidates = vec![1, 2, 3], max_epochs = 2000, patience = 100, restarts = 3, learning_rate = 0.01, beta = 10.0, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    observations: Vec<Observation>,
    n: usize,
    d: Option<usize>,
    d_candidates: Vec<usize>,
    max_epochs: usize,
    patience: usize,
    restarts: usize,
    learning_rate: f64,
    beta: f64,
    seed: u64,
) -> PyResult<Ensemble> {
    let obs: Vec<hsj_core::Observation> = observations.into_iter().map(|o| o.0).collect();
    let config = FitConfig {
        d_candidates: d.map_or(d_candidates, |d| vec![d]),
        max_epochs,
        patience,
        restarts,
        learning_rate,
        beta,
        seed,
        ..FitConfig::default()
    };
    py.detach(|| {
        let search = select_dimensionality(&obs, n, &config, 0)?;
        match search.ensemble {
            Some(e) => Ok(e),
            None => fit_ensemble(&obs, n, search.chosen, &config, None, 0),
        }
    })
    .map(Ensemble)
    .map_err(err)
}

/// Session scheduler with the participant protocol: catch trials, grading,
/// eligibility and re-issue until each session has a premium completion.
#[pyclass(module = "pyhsj")]
struct Collector(CoreCollector);

#[pymethods]
impl Collector {
    /// Packs `trials` (a multiple of 46) into 50-slot sessions for a
    /// synthetic catalog of `n` stimuli.
    #[new]
    #[pyo3(signature = (n, trials, seed = 0, ineligible = Vec::new()))]
    fn new(n: usize, trials: Vec<Trial>, seed: u64, ineligible: Vec<String>) -> PyResult<Self> {
        let trials: Vec<hsj_core::Trial> = trials.into_iter().map(|t| t.0).collect();
        let sessions = build_sessions(&trials, 50, 4, "py", &mut rng_from(seed)).map_err(err)?;
        let mut c = CoreCollector::new(Catalog::synthetic(n), ineligible.into_iter().collect::<BTreeSet<_>>());
        c.enqueue(sessions).map_err(err)?;
        Ok(Collector(c))
    }

    /// Returns `(session_id, n_trials)`.
    fn start_session(&mut self, worker_hash: &str) -> PyResult<(String, usize)> {
        let d = self.0.start_session(worker_hash, Instant::now()).map_err(collect_err)?;
        Ok((d.session_id, d.n_trials))
    }

    /// Returns `(query_url, reference_urls)` as shown to participants.
    fn trial(&self, session_id: &str, slot: usize) -> PyResult<(String, Vec<String>)> {
        let t = self.0.trial(session_id, slot).map_err(collect_err)?;
        Ok((t.query_url, t.reference_urls))
    }

    /// Mirror URL of stimulus `index` in the synthetic catalog.
    #[staticmethod]
    fn mirror_url(n: usize, index: usize) -> PyResult<String> {
        Catalog::synthetic(n)
            .stimuli
            .get(index)
            .map(|s| s.mirror_url.clone())
            .ok_or_else(|| PyValueError::new_err("index outside catalog"))
    }

    /// Returns the next open slot, or the session classification once the
    /// last slot is judged.
    fn submit(&mut self, session_id: &str, slot: usize, first: usize, second: usize, duration_s: f64) -> PyResult<(Option<usize>, Option<String>)> {
        match self.0.submit(session_id, slot, &[first, second], duration_s).map_err(collect_err)? {
            SubmitResponse::Next { next_slot } => Ok((Some(next_slot), None)),
            SubmitResponse::Complete { classification } => {
                let name = serde_json::to_value(classification).map_err(|e| PyValueError::new_err(e.to_string()))?;
                Ok((None, name.as_str().map(str::to_string)))
            }
        }
    }

    fn is_done(&self) -> bool {
        self.0.is_done()
    }

    fn is_eligible(&self, worker_hash: &str) -> bool {
        self.0.is_eligible(worker_hash)
    }

    /// Observations from retained completions so far; clears the buffer.
    fn take_observations(&mut self) -> Vec<Observation> {
        self.0.take_results().1.into_iter().map(Observation).collect()
    }
}

/// Weighted fraction of implied triplets ordered correctly by `features`.
#[pyfunction]
#[pyo3(signature = (features, observations, distance = "l2"))]
fn triplet_accuracy(features: Vec<Vec<f64>>, observations: Vec<Observation>, distance: &str) -> PyResult<f64> {
    let distance = match distance {
        "l1" => Distance::L1,
        "l2" => Distance::L2,
        "cosine" => Distance::Cosine,
        other => return Err(PyValueError::new_err(format!("unknown distance {other:?}"))),
    };
    let obs: Vec<hsj_core::Observation> = observations.into_iter().map(|o| o.0).collect();
    let triplets = expand_all(&obs).map_err(err)?;
    core_triplet_accuracy(matrix(features)?.view(), &triplets, distance).map_err(err)
}

/// One-sided sign test p-value for `wins` out of `n`.
#[pyfunction]
fn sign_test(wins: u64, n: u64) -> PyResult<f64> {
    stats::sign_test(wins, n).map_err(err)
}

/// G-test p-value of counts against probabilities.
#[pyfunction]
fn g_test(observed: Vec<u64>, probabilities: Vec<f64>) -> PyResult<f64> {
    stats::g_test(&observed, &probabilities).map(|g| g.p_value).map_err(err)
}

#[pymodule]
fn pyhsj(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Trial>()?;
    m.add_class::<Observation>()?;
    m.add_class::<Oracle>()?;
    m.add_class::<Ensemble>()?;
    m.add_class::<Collector>()?;
    m.add_function(wrap_pyfunction!(outcome_probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(random_truth, m)?)?;
    m.add_function(wrap_pyfunction!(random_trials, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(sign_test, m)?)?;
    m.add_function(wrap_pyfunction!(g_test, m)?)?;
    Ok(())
}
