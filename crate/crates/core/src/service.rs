//! Judgment collection and the active-learning iteration loop.
//!
//! [`Collector`] is the scheduler behind the participant API: it leases
//! sessions to eligible workers, records per-slot judgments, grades finished
//! sessions and re-issues every session until it has a premium completion.
//! [`Pipeline`] runs one iteration at a time (select, build sessions,
//! collect, fit, report). Each stage leaves its result in the dataset store
//! and is skipped when that result already exists, so an interrupted
//! iteration resumes where it stopped.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::active::{
    make_confirmation_trials, random_trials, select_trials, QueryUsageCounter, SelectedTrial, SelectionConfig,
    TrialOrigin, TRIAL_REFERENCES, TRIAL_SELECT,
};
use crate::error::{Error, Result};
use crate::inference::{fit_ensemble, select_dimensionality, Ensemble, FitConfig};
use crate::metrics::{consecutive_ensemble_agreement, coarse_loss, within_ensemble_agreement, DEFAULT_METRIC_MC_SAMPLES};
use crate::model::{Observation, StimulusId};
use crate::oracle::{Oracle, SimulatedWorker};
use crate::quality::{
    build_sessions, finalize_observations, grade_session, Classification, Judgment, Session, SessionSlot,
    CATCHES_PER_SESSION, SESSION_SIZE,
};
use crate::seed::{derive_seed, rng_from};
use crate::store::{read_json, read_jsonl, write_json, write_jsonl, Catalog, DatasetStore};

/// How long a started session stays reserved for its worker.
pub const LEASE_DURATION: Duration = Duration::from_secs(30 * 60);

/// Failures of participant-facing requests.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CollectError {
    #[error("worker {0} is not eligible for further sessions")]
    Ineligible(String),
    #[error("no sessions are available")]
    NoSessions,
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    NotFound(String),
}

impl CollectError {
    pub fn status_code(&self) -> u16 {
        match self {
            CollectError::Ineligible(_) => 403,
            CollectError::NoSessions | CollectError::Conflict(_) => 409,
            CollectError::Validation(_) => 422,
            CollectError::NotFound(_) => 404,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionDescriptor {
    pub session_id: String,
    pub n_trials: usize,
}

/// What a participant sees for one slot. Catch slots look like any other.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipantTrial {
    pub query_url: String,
    pub reference_urls: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRequest {
    pub first: usize,
    pub second: usize,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase", deny_unknown_fields)]
pub enum SubmitResponse {
    Next { next_slot: usize },
    Complete { classification: Classification },
}

#[derive(Debug, Clone)]
struct ActiveSession {
    session: Session,
    base_id: String,
    lease_until: Instant,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectorStatus {
    pub sessions: usize,
    pub premium: usize,
    pub pending: usize,
    pub active: usize,
    pub completions: usize,
    pub ineligible_workers: usize,
}

/// Session scheduler for one batch of sessions.
#[derive(Debug, Clone)]
pub struct Collector {
    catalog: Catalog,
    templates: HashMap<String, Session>,
    pending: VecDeque<String>,
    active: HashMap<String, ActiveSession>,
    attempts: HashMap<String, u32>,
    premium: HashSet<String>,
    ineligible: BTreeSet<String>,
    completed: Vec<Session>,
    observations: Vec<Observation>,
    lease: Duration,
}

impl Collector {
    pub fn new(catalog: Catalog, ineligible: BTreeSet<String>) -> Self {
        Collector {
            catalog,
            templates: HashMap::new(),
            pending: VecDeque::new(),
            active: HashMap::new(),
            attempts: HashMap::new(),
            premium: HashSet::new(),
            ineligible,
            completed: Vec::new(),
            observations: Vec::new(),
            lease: LEASE_DURATION,
        }
    }

    pub fn with_lease(mut self, lease: Duration) -> Self {
        self.lease = lease;
        self
    }

    /// Queues unjudged sessions; ids must be new to this collector.
    pub fn enqueue(&mut self, sessions: Vec<Session>) -> Result<()> {
        for s in &sessions {
            if self.templates.contains_key(&s.id) {
                return Err(Error::state(format!("session {} is already scheduled", s.id)));
            }
            if s.trials.iter().any(|slot| slot.trial().max_index() >= self.catalog.len()) {
                return Err(Error::arg(format!("session {} references a stimulus outside the catalog", s.id)));
            }
        }
        for s in sessions {
            self.pending.push_back(s.id.clone());
            self.templates.insert(s.id.clone(), s.reissue(s.id.clone()));
        }
        Ok(())
    }

    pub fn is_eligible(&self, worker_hash: &str) -> bool {
        !self.ineligible.contains(worker_hash)
    }

    pub fn ineligible_workers(&self) -> &BTreeSet<String> {
        &self.ineligible
    }

    /// Every scheduled session has a premium completion.
    pub fn is_done(&self) -> bool {
        self.premium.len() == self.templates.len()
    }

    pub fn status(&self) -> CollectorStatus {
        CollectorStatus {
            sessions: self.templates.len(),
            premium: self.premium.len(),
            pending: self.pending.len(),
            active: self.active.len(),
            completions: self.completed.len(),
            ineligible_workers: self.ineligible.len(),
        }
    }

    /// Returns expired leases to the front of the queue. Judgments made under
    /// an expired lease are discarded.
    pub fn reclaim_expired(&mut self, now: Instant) {
        let mut expired: Vec<(String, String)> = self
            .active
            .iter()
            .filter(|(_, a)| a.lease_until <= now)
            .map(|(id, a)| (id.clone(), a.base_id.clone()))
            .collect();
        expired.sort();
        for (id, base) in expired.into_iter().rev() {
            self.active.remove(&id);
            self.pending.push_front(base);
        }
    }

    /// Leases the next pending session to `worker_hash`.
    pub fn start_session(&mut self, worker_hash: &str, now: Instant) -> Result<SessionDescriptor, CollectError> {
        if !self.is_eligible(worker_hash) {
            return Err(CollectError::Ineligible(worker_hash.to_string()));
        }
        self.reclaim_expired(now);
        let base = self.pending.pop_front().ok_or(CollectError::NoSessions)?;
        let attempt = self.attempts.entry(base.clone()).or_insert(0);
        *attempt += 1;
        let id = format!("{base}-a{:02}", *attempt);
        let mut session = self.templates[&base].reissue(id.clone());
        session.worker_hash = Some(worker_hash.to_string());
        let n_trials = session.len();
        self.active.insert(
            id.clone(),
            ActiveSession {
                session,
                base_id: base,
                lease_until: now + self.lease,
            },
        );
        Ok(SessionDescriptor {
            session_id: id,
            n_trials,
        })
    }

    fn active(&self, session_id: &str) -> Result<&ActiveSession, CollectError> {
        self.active
            .get(session_id)
            .ok_or_else(|| CollectError::NotFound(format!("no active session {session_id}")))
    }

    /// Full slot contents including catch metadata; never sent to participants.
    pub fn session(&self, session_id: &str) -> Option<&Session> {
        self.active.get(session_id).map(|a| &a.session)
    }

    /// Participant view of one slot: stimulus URLs only.
    pub fn trial(&self, session_id: &str, slot: usize) -> Result<ParticipantTrial, CollectError> {
        let a = self.active(session_id)?;
        let s = a
            .session
            .trials
            .get(slot)
            .ok_or_else(|| CollectError::NotFound(format!("slot {slot} outside session of {}", a.session.len())))?;
        let url = |id: StimulusId| self.catalog.stimuli[id.index()].url.clone();
        let (query_url, reference_urls) = match s {
            SessionSlot::Content { trial } => (url(trial.query()), trial.references().iter().map(|&r| url(r)).collect()),
            SessionSlot::Catch { catch } => {
                let trial = catch.base();
                let mirror = self.catalog.stimuli[trial.query().index()].mirror_url.clone();
                let refs = trial
                    .references()
                    .iter()
                    .enumerate()
                    .map(|(k, &r)| if k == catch.mirror_position() { mirror.clone() } else { url(r) })
                    .collect();
                (url(trial.query()), refs)
            }
        };
        Ok(ParticipantTrial {
            query_url,
            reference_urls,
        })
    }

    /// Records ranked `choices` (reference positions, most similar first)
    /// for one slot. The last judgment grades the session: non-premium
    /// workers become ineligible, retained sessions contribute observations,
    /// and a session without a premium completion goes back in the queue.
    pub fn submit(
        &mut self,
        session_id: &str,
        slot: usize,
        choices: &[usize],
        duration_s: f64,
    ) -> Result<SubmitResponse, CollectError> {
        let a = self.active(session_id)?;
        let trial = a
            .session
            .trials
            .get(slot)
            .ok_or_else(|| CollectError::Validation(format!("slot {slot} outside session of {}", a.session.len())))?
            .trial();
        if choices.len() != trial.n_select() {
            return Err(CollectError::Validation(format!("expected {} choices", trial.n_select())));
        }
        if !(duration_s.is_finite() && duration_s >= 0.0) {
            return Err(CollectError::Validation("duration_s must be a non-negative number".into()));
        }
        let outcome = trial.encode(choices).map_err(|e| CollectError::Validation(e.to_string()))?;
        if a.session.judgments[slot].is_some() {
            return Err(CollectError::Conflict(format!("slot {slot} of {session_id} is already judged")));
        }
        let entry = self.active.get_mut(session_id).expect("checked above");
        entry
            .session
            .record(slot, Judgment { outcome, duration_s })
            .map_err(|e| CollectError::Conflict(e.to_string()))?;
        if !entry.session.is_complete() {
            let next_slot = (0..entry.session.len())
                .map(|k| (slot + 1 + k) % entry.session.len())
                .find(|&k| entry.session.judgments[k].is_none())
                .expect("incomplete session has an open slot");
            return Ok(SubmitResponse::Next { next_slot });
        }

        let ActiveSession {
            mut session, base_id, ..
        } = self.active.remove(session_id).expect("checked above");
        let (_, classification) = grade_session(&mut session).expect("complete session");
        let worker = session.worker_hash.clone().unwrap_or_default();
        if !classification.keeps_worker_eligible() {
            self.ineligible.insert(worker);
        }
        if classification.is_retained() {
            self.observations
                .extend(finalize_observations(&session).expect("graded, retained session"));
        }
        if classification == Classification::Premium {
            self.premium.insert(base_id);
        } else if !self.premium.contains(&base_id) {
            self.pending.push_back(base_id);
        }
        self.completed.push(session);
        Ok(SubmitResponse::Complete { classification })
    }

    /// Completed sessions (every attempt) and the observations they
    /// contributed, in completion order.
    pub fn take_results(&mut self) -> (Vec<Session>, Vec<Observation>) {
        (std::mem::take(&mut self.completed), std::mem::take(&mut self.observations))
    }
}

/// Something that gets scheduled sessions judged.
pub trait SessionDriver {
    fn drive(&mut self, collector: &mut Collector) -> Result<()>;
}

/// A pool of simulated workers judging through the collector, exactly as
/// the participant API would.
#[derive(Debug, Clone)]
pub struct OracleCrowd {
    oracle: Oracle,
    workers: Vec<SimulatedWorker>,
    next_worker: usize,
    /// Session starts allowed per scheduled session before giving up.
    pub max_attempts_per_session: usize,
}

impl OracleCrowd {
    pub fn new(oracle: Oracle, workers: Vec<SimulatedWorker>) -> Result<Self> {
        if workers.is_empty() {
            return Err(Error::arg("the crowd needs at least one worker"));
        }
        Ok(OracleCrowd {
            oracle,
            workers,
            next_worker: 0,
            max_attempts_per_session: 50,
        })
    }

    pub fn oracle_mut(&mut self) -> &mut Oracle {
        &mut self.oracle
    }

    fn next_eligible(&mut self, collector: &Collector) -> Option<SimulatedWorker> {
        for k in 0..self.workers.len() {
            let w = &self.workers[(self.next_worker + k) % self.workers.len()];
            if collector.is_eligible(&w.worker_hash) {
                let w = w.clone();
                self.next_worker = (self.next_worker + k + 1) % self.workers.len();
                return Some(w);
            }
        }
        None
    }

    /// Judges one full session for `worker`.
    fn judge_session(&mut self, collector: &mut Collector, worker: &SimulatedWorker) -> Result<()> {
        let desc = collector
            .start_session(&worker.worker_hash, Instant::now())
            .map_err(|e| Error::state(e.to_string()))?;
        let session = collector.session(&desc.session_id).expect("just started").clone();
        self.oracle.set_catch_accuracy(worker.catch_accuracy);
        for (slot, s) in session.trials.iter().enumerate() {
            let outcome = match s {
                SessionSlot::Content { trial } => self.oracle.judge(trial)?,
                SessionSlot::Catch { catch } => self.oracle.judge_catch(catch)?,
            };
            let choices = s.trial().decode(outcome)?;
            collector
                .submit(&desc.session_id, slot, &choices, self.oracle.duration_s())
                .map_err(|e| Error::state(e.to_string()))?;
        }
        Ok(())
    }
}

impl SessionDriver for OracleCrowd {
    fn drive(&mut self, collector: &mut Collector) -> Result<()> {
        let limit = self.max_attempts_per_session * collector.status().sessions.max(1);
        let mut started = 0;
        while !collector.is_done() {
            if started >= limit {
                return Err(Error::state(format!("sessions still lack premium completions after {started} attempts")));
            }
            let worker = self
                .next_eligible(collector)
                .ok_or_else(|| Error::state("every simulated worker is ineligible"))?;
            self.judge_session(collector, &worker)?;
            started += 1;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub tag: String,
    pub fit: FitConfig,
    pub selection: SelectionConfig,
    /// Random trials collected before any model exists.
    pub cold_start_trials: usize,
    pub session_size: usize,
    pub catches_per_session: usize,
    /// Dimensionality is searched at iterations divisible by this.
    pub research_dim_every: u32,
    pub metric_mc_samples: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tag: "0.1".into(),
            fit: FitConfig::default(),
            selection: SelectionConfig::default(),
            cold_start_trials: 3312,
            session_size: SESSION_SIZE,
            catches_per_session: CATCHES_PER_SESSION,
            research_dim_every: 5,
            metric_mc_samples: DEFAULT_METRIC_MC_SAMPLES,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn trials_per_iteration(&self) -> usize {
        self.selection.n_queries * self.selection.keep_per_query + self.selection.n_confirmation
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        self.fit.validate()?;
        self.selection.validate(n)?;
        if self.research_dim_every == 0 || self.metric_mc_samples == 0 {
            return Err(Error::arg("research_dim_every and metric_mc_samples must be positive"));
        }
        let content = self.session_size.saturating_sub(self.catches_per_session);
        for (what, count) in [
            ("cold_start_trials", self.cold_start_trials),
            ("trials per iteration", self.trials_per_iteration()),
        ] {
            if count == 0 || content == 0 || count % content != 0 {
                return Err(Error::arg(format!(
                    "{what} ({count}) must be a positive multiple of {content} content trials per session"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: u32,
    pub n_observations: usize,
    pub n_trials: usize,
    /// Sessions that reached a premium completion.
    pub n_sessions: usize,
    /// Completed attempts, premium or not.
    pub n_completions: usize,
    pub d: usize,
    /// Mean holdout loss per dimensionality, when a search ran.
    pub dimension_losses: Vec<(usize, f64)>,
    pub val_loss: Vec<f64>,
    pub coarse_loss: Option<f64>,
    pub within_ensemble_agreement: f64,
    pub consecutive_ensemble_agreement: Option<f64>,
}

/// Iteration loop over one dataset version.
#[derive(Debug)]
pub struct Pipeline {
    store: DatasetStore,
    config: PipelineConfig,
}

fn batch_label(iteration: u32) -> String {
    format!("iter-{iteration:03}")
}

impl Pipeline {
    pub fn open(root: &Path, catalog: Catalog, config: PipelineConfig) -> Result<Self> {
        config.validate(catalog.len())?;
        let store = DatasetStore::open_or_create(root, &config.tag, catalog)?;
        Ok(Pipeline { store, config })
    }

    pub fn store(&self) -> &DatasetStore {
        &self.store
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn report_path(&self, iteration: u32) -> std::path::PathBuf {
        self.store.dir().join("reports").join(format!("iter-{iteration:03}.json"))
    }

    fn plan_path(&self, iteration: u32) -> std::path::PathBuf {
        self.store.dir().join("plans").join(format!("iter-{iteration:03}.json"))
    }

    fn coarse_path(&self) -> std::path::PathBuf {
        self.store.dir().join("coarse.jsonl")
    }

    /// First iteration without a report.
    pub fn next_iteration(&self) -> u32 {
        (0..).find(|&t| !self.report_path(t).exists()).expect("finite")
    }

    pub fn load_report(&self, iteration: u32) -> Result<Option<IterationReport>> {
        let path = self.report_path(iteration);
        if path.exists() {
            read_json(&path).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Workers whose stored completions include a non-premium grade.
    pub fn ineligible_workers(&self) -> Result<BTreeSet<String>> {
        Ok(self
            .store
            .load_sessions()?
            .into_iter()
            .filter(|s| s.classification.is_some_and(|c| !c.keeps_worker_eligible()))
            .filter_map(|s| s.worker_hash)
            .collect())
    }

    /// Query usage over every trial batch before `iteration`.
    pub fn usage_counter(&self, iteration: u32) -> Result<QueryUsageCounter> {
        let mut counter = QueryUsageCounter::new();
        for t in 0..iteration {
            if let Some(trials) = self.store.load_trials(t)? {
                for st in trials {
                    counter.increment(st.trial.query(), 1);
                }
            }
        }
        Ok(counter)
    }

    fn stage_seed(&self, iteration: u32, stage: u64) -> u64 {
        derive_seed(self.config.seed, &[iteration as u64, stage])
    }

    /// Selects (or reloads) the iteration's trials: random at a cold start,
    /// otherwise information-gain trials plus confirmation trials.
    pub fn select(&mut self, iteration: u32) -> Result<Vec<SelectedTrial>> {
        if let Some(trials) = self.store.load_trials(iteration)? {
            return Ok(trials);
        }
        let n = self.store.n_stimuli();
        let previous = match iteration {
            0 => None,
            t => self.store.load_ensemble(t - 1)?,
        };
        let mut rng = rng_from(self.stage_seed(iteration, 1));
        let selected: Vec<SelectedTrial> = match previous {
            None => random_trials(n, self.config.cold_start_trials, TRIAL_REFERENCES, TRIAL_SELECT, &mut rng)?
                .into_iter()
                .map(|trial| SelectedTrial {
                    trial,
                    origin: TrialOrigin::Random,
                    iteration,
                })
                .collect(),
            Some(ensemble) => {
                let mut counter = self.usage_counter(iteration)?;
                let selection = SelectionConfig {
                    seed: self.stage_seed(iteration, 2),
                    ..self.config.selection.clone()
                };
                let ig = select_trials(&ensemble, &mut counter, &selection)?;
                let confirmation = make_confirmation_trials(&ensemble, &mut counter, &selection, &mut rng)?;
                ig.into_iter()
                    .map(|c| SelectedTrial {
                        trial: c.trial,
                        origin: TrialOrigin::Ig,
                        iteration,
                    })
                    .chain(confirmation.into_iter().map(|trial| SelectedTrial {
                        trial,
                        origin: TrialOrigin::Confirmation,
                        iteration,
                    }))
                    .collect()
            }
        };
        self.store.save_trials(iteration, &selected)?;
        Ok(selected)
    }

    /// The iteration's sessions, built once and then reloaded.
    pub fn plan_sessions(&mut self, iteration: u32) -> Result<Vec<Session>> {
        let path = self.plan_path(iteration);
        if path.exists() {
            return read_json(&path);
        }
        let trials: Vec<_> = self.select(iteration)?.into_iter().map(|s| s.trial).collect();
        let mut rng = rng_from(self.stage_seed(iteration, 3));
        let sessions = build_sessions(
            &trials,
            self.config.session_size,
            self.config.catches_per_session,
            &format!("{}-{}", self.config.tag, batch_label(iteration)),
            &mut rng,
        )?;
        write_json(&path, &sessions)?;
        Ok(sessions)
    }

    pub fn is_collected(&self, iteration: u32) -> bool {
        self.store.has_observation_batch(&batch_label(iteration))
    }

    /// Sessions to put in front of judges, or nothing when the iteration's
    /// collection is already stored.
    pub fn prepare(&mut self, iteration: u32) -> Result<Option<Vec<Session>>> {
        if self.is_collected(iteration) {
            return Ok(None);
        }
        let label = batch_label(iteration);
        if self.store.has_session_batch(&label) {
            // Sessions were stored but their observations were not.
            self.commit_collection(iteration, Vec::new())?;
            return Ok(None);
        }
        self.plan_sessions(iteration).map(Some)
    }

    /// Stores completed sessions and the observations derived from them.
    /// Retrying after a partial write appends nothing twice.
    pub fn commit_collection(&mut self, iteration: u32, completed: Vec<Session>) -> Result<()> {
        let label = batch_label(iteration);
        self.store.append_sessions(&completed, Some(&label))?;
        if self.is_collected(iteration) {
            return Ok(());
        }
        let mut observations = Vec::new();
        for f in self.store.manifest().session_files.clone() {
            if f.label.as_deref() != Some(label.as_str()) {
                continue;
            }
            for s in read_jsonl::<Session>(&self.store.dir().join(&f.name))? {
                if s.classification.is_some_and(Classification::is_retained) {
                    observations.extend(finalize_observations(&s)?);
                }
            }
        }
        self.store.append_observations(&observations, Some(&label))?;
        Ok(())
    }

    /// Runs the collection stage with `driver`.
    pub fn collect(&mut self, iteration: u32, driver: &mut dyn SessionDriver) -> Result<()> {
        let Some(plan) = self.prepare(iteration)? else {
            return Ok(());
        };
        let mut collector = Collector::new(self.store.catalog().clone(), self.ineligible_workers()?);
        collector.enqueue(plan)?;
        driver.drive(&mut collector)?;
        let (completed, _) = collector.take_results();
        self.commit_collection(iteration, completed)
    }

    /// Fits (or reloads) the iteration's ensemble. Dimensionality is
    /// searched on schedule and otherwise carried over, in which case the
    /// previous ensemble provides warm starts.
    pub fn fit(&mut self, iteration: u32) -> Result<(Ensemble, Vec<(usize, f64)>)> {
        if let Some(e) = self.store.load_ensemble(iteration)? {
            return Ok((e, Vec::new()));
        }
        let observations = self.store.load_observations()?;
        let n = self.store.n_stimuli();
        let fit = FitConfig {
            seed: self.stage_seed(iteration, 4),
            ..self.config.fit.clone()
        };
        let previous = match iteration {
            0 => None,
            t => self.store.load_ensemble(t - 1)?,
        };
        let search_due = iteration % self.config.research_dim_every == 0 || previous.is_none();
        let (ensemble, losses) = if search_due {
            let search = select_dimensionality(&observations, n, &fit, iteration)?;
            let ensemble = match search.ensemble {
                Some(e) => e,
                None => fit_ensemble(&observations, n, search.chosen, &fit, previous.as_ref(), iteration)?,
            };
            (ensemble, search.losses)
        } else {
            let prev = previous.expect("checked above");
            (fit_ensemble(&observations, n, prev.d(), &fit, Some(&prev), iteration)?, Vec::new())
        };
        self.store.save_ensemble(&ensemble)?;
        Ok((ensemble, losses))
    }

    /// Judges a fixed set of random trials with `oracle` for coarse-grained
    /// loss, once per dataset version.
    pub fn ensure_coarse_set(&self, size: usize, oracle: &mut Oracle) -> Result<Vec<Observation>> {
        let path = self.coarse_path();
        if path.exists() {
            return read_jsonl(&path);
        }
        let mut rng = rng_from(derive_seed(self.config.seed, &[0xc0a5]));
        let trials = random_trials(self.store.n_stimuli(), size, TRIAL_REFERENCES, TRIAL_SELECT, &mut rng)?;
        let set = oracle.observe_all(&trials)?;
        write_jsonl(&path, &set)?;
        Ok(set)
    }

    /// The stored coarse-grained evaluation set, if any.
    pub fn coarse_set(&self) -> Result<Option<Vec<Observation>>> {
        let path = self.coarse_path();
        if path.exists() {
            read_jsonl(&path).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Computes and stores the iteration report.
    pub fn report(&mut self, iteration: u32, ensemble: &Ensemble, dimension_losses: Vec<(usize, f64)>) -> Result<IterationReport> {
        let mc = self.config.metric_mc_samples;
        let seed = self.stage_seed(iteration, 5);
        let coarse = match self.coarse_set()? {
            Some(set) if !set.is_empty() => Some(coarse_loss(ensemble, &set, mc, &mut rng_from(seed))?),
            _ => None,
        };
        let consecutive = match iteration {
            0 => None,
            t => match self.store.load_ensemble(t - 1)? {
                Some(prev) => Some(consecutive_ensemble_agreement(&prev, ensemble, mc, seed)?),
                None => None,
            },
        };
        let label = batch_label(iteration);
        let sessions: Vec<Session> = {
            let mut out = Vec::new();
            for f in &self.store.manifest().session_files {
                if f.label.as_deref() == Some(label.as_str()) {
                    out.extend(read_jsonl::<Session>(&self.store.dir().join(&f.name))?);
                }
            }
            out
        };
        let report = IterationReport {
            iteration,
            n_observations: self.store.manifest().observation_count(),
            n_trials: self.store.load_trials(iteration)?.map_or(0, |t| t.len()),
            n_sessions: sessions
                .iter()
                .filter(|s| s.classification == Some(Classification::Premium))
                .count(),
            n_completions: sessions.len(),
            d: ensemble.d(),
            dimension_losses,
            val_loss: ensemble.val_loss().to_vec(),
            coarse_loss: coarse,
            within_ensemble_agreement: within_ensemble_agreement(ensemble, mc, seed)?,
            consecutive_ensemble_agreement: consecutive,
        };
        write_json(&self.report_path(iteration), &report)?;
        Ok(report)
    }

    /// One full iteration; every finished stage is reused on a rerun.
    pub fn run_iteration(&mut self, driver: &mut dyn SessionDriver) -> Result<IterationReport> {
        let t = self.next_iteration();
        self.collect(t, driver)?;
        let (ensemble, losses) = self.fit(t)?;
        self.report(t, &ensemble, losses)
    }
}
