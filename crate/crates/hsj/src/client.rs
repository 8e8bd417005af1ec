//! Scripted participants that judge sessions through the HTTP API.
//!
//! The client only sees what a person would: stimulus URLs. It maps them
//! back to stimuli through the catalog, recognizes a mirrored query the way
//! a careful judge would, and checks that every participant payload has
//! exactly the public schema.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::Duration;

use anyhow::{bail, ensure, Context};
use hsj_core::oracle::{Oracle, SimulatedWorker};
use hsj_core::service::{ParticipantTrial, SessionDescriptor, SubmitRequest, SubmitResponse};
use hsj_core::store::Catalog;
use hsj_core::StimulusId;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::server::{Phase, StartRequest, StatusResponse};

const SELECT: usize = hsj_core::active::TRIAL_SELECT;

fn keys(value: &Value) -> anyhow::Result<Vec<&str>> {
    let obj = value.as_object().context("payload is not a JSON object")?;
    let mut k: Vec<&str> = obj.keys().map(String::as_str).collect();
    k.sort_unstable();
    Ok(k)
}

/// Checks a session descriptor against the public schema.
pub fn check_descriptor_schema(value: &Value) -> anyhow::Result<SessionDescriptor> {
    ensure!(keys(value)? == ["n_trials", "session_id"], "unexpected descriptor fields in {value}");
    Ok(serde_json::from_value(value.clone())?)
}

/// Checks a trial payload against the public schema: a query URL and eight
/// reference URLs, nothing else.
pub fn check_trial_schema(value: &Value) -> anyhow::Result<ParticipantTrial> {
    ensure!(keys(value)? == ["query_url", "reference_urls"], "unexpected trial fields in {value}");
    let refs = value["reference_urls"].as_array().context("reference_urls is not an array")?;
    ensure!(
        refs.len() == hsj_core::active::TRIAL_REFERENCES && refs.iter().all(Value::is_string),
        "reference_urls must hold {} strings",
        hsj_core::active::TRIAL_REFERENCES
    );
    ensure!(value["query_url"].is_string(), "query_url is not a string");
    Ok(serde_json::from_value(value.clone())?)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientStats {
    pub sessions_started: usize,
    pub sessions_completed: usize,
    pub trials_judged: usize,
    pub payloads_checked: usize,
    pub rejected_workers: usize,
    pub classifications: BTreeMap<String, usize>,
}

enum Url {
    Stimulus(StimulusId),
    Mirror(StimulusId),
}

pub struct OracleClient {
    http: reqwest::Client,
    base: String,
    oracle: Oracle,
    workers: Vec<SimulatedWorker>,
    ineligible: HashSet<String>,
    next_worker: usize,
    urls: HashMap<String, Url>,
    pub stats: ClientStats,
}

impl OracleClient {
    pub fn new(base: impl Into<String>, catalog: &Catalog, oracle: Oracle, workers: Vec<SimulatedWorker>) -> Self {
        let mut urls = HashMap::new();
        for (i, s) in catalog.stimuli.iter().enumerate() {
            urls.insert(s.url.clone(), Url::Stimulus(StimulusId(i)));
            urls.insert(s.mirror_url.clone(), Url::Mirror(StimulusId(i)));
        }
        OracleClient {
            http: reqwest::Client::new(),
            base: base.into().trim_end_matches('/').to_string(),
            oracle,
            workers,
            ineligible: HashSet::new(),
            next_worker: 0,
            urls,
            stats: ClientStats::default(),
        }
    }

    pub async fn status(&self) -> anyhow::Result<StatusResponse> {
        let resp = self.http.get(format!("{}/v1/status", self.base)).send().await?;
        ensure!(resp.status().is_success(), "status request failed with {}", resp.status());
        Ok(resp.json().await?)
    }

    fn next_worker(&mut self) -> anyhow::Result<SimulatedWorker> {
        for k in 0..self.workers.len() {
            let idx = (self.next_worker + k) % self.workers.len();
            if !self.ineligible.contains(&self.workers[idx].worker_hash) {
                self.next_worker = (idx + 1) % self.workers.len();
                return Ok(self.workers[idx].clone());
            }
        }
        bail!("every simulated worker is ineligible")
    }

    fn stimulus(&self, url: &str) -> anyhow::Result<&Url> {
        self.urls.get(url).with_context(|| format!("unknown stimulus url {url}"))
    }

    /// Ranked reference positions for one displayed trial.
    fn judge(&mut self, trial: &ParticipantTrial) -> anyhow::Result<Vec<usize>> {
        let query = match self.stimulus(&trial.query_url)? {
            Url::Stimulus(q) => *q,
            Url::Mirror(_) => bail!("query slot shows a mirror image"),
        };
        let refs = trial
            .reference_urls
            .iter()
            .map(|u| match self.stimulus(u)? {
                Url::Stimulus(s) => Ok(Some(*s)),
                Url::Mirror(s) if *s == query => Ok(None),
                Url::Mirror(_) => bail!("reference shows the mirror of a different stimulus"),
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        Ok(self.oracle.judge_display(query, &refs, SELECT)?)
    }

    async fn get_json(&self, url: String) -> anyhow::Result<(StatusCode, Value)> {
        let resp = self.http.get(url).send().await?;
        Ok((resp.status(), resp.json().await?))
    }

    async fn post_json(&self, url: String, body: &impl Serialize) -> anyhow::Result<(StatusCode, Value)> {
        let resp = self.http.post(url).json(body).send().await?;
        Ok((resp.status(), resp.json().await?))
    }

    /// Judges one session as `worker`; `None` when no session was available.
    async fn run_session(&mut self, worker: &SimulatedWorker) -> anyhow::Result<Option<()>> {
        let (code, body) = self
            .post_json(
                format!("{}/v1/sessions", self.base),
                &StartRequest {
                    worker_hash: worker.worker_hash.clone(),
                },
            )
            .await?;
        match code {
            StatusCode::FORBIDDEN => {
                self.ineligible.insert(worker.worker_hash.clone());
                self.stats.rejected_workers += 1;
                return Ok(Some(()));
            }
            StatusCode::CONFLICT => return Ok(None),
            c if !c.is_success() => bail!("session start failed with {c}: {body}"),
            _ => {}
        }
        let desc = check_descriptor_schema(&body)?;
        self.stats.payloads_checked += 1;
        self.stats.sessions_started += 1;
        self.oracle.set_catch_accuracy(worker.catch_accuracy);
        let mut slot = 0;
        loop {
            let url = format!("{}/v1/sessions/{}/trials/{slot}", self.base, desc.session_id);
            let (code, body) = self.get_json(url.clone()).await?;
            if code == StatusCode::NOT_FOUND {
                // The lease expired; the session went back into the queue.
                return Ok(Some(()));
            }
            ensure!(code.is_success(), "trial request failed with {code}: {body}");
            let trial = check_trial_schema(&body)?;
            self.stats.payloads_checked += 1;
            let choices = self.judge(&trial)?;
            let request = SubmitRequest {
                first: choices[0],
                second: choices[1],
                duration_s: self.oracle.duration_s(),
            };
            let (code, body) = self.post_json(url, &request).await?;
            ensure!(code.is_success(), "submission failed with {code}: {body}");
            self.stats.trials_judged += 1;
            match serde_json::from_value::<SubmitResponse>(body)? {
                SubmitResponse::Next { next_slot } => slot = next_slot,
                SubmitResponse::Complete { classification } => {
                    let key = serde_json::to_value(classification)?.as_str().unwrap_or_default().to_string();
                    *self.stats.classifications.entry(key).or_default() += 1;
                    self.stats.sessions_completed += 1;
                    return Ok(Some(()));
                }
            }
        }
    }

    /// Keeps judging until the service finishes its iterations.
    pub async fn run(&mut self) -> anyhow::Result<ClientStats> {
        loop {
            let status = self.status().await?;
            match status.phase {
                Phase::Finished => return Ok(self.stats.clone()),
                Phase::Failed => bail!("service failed: {}", status.error.unwrap_or_default()),
                Phase::Collecting => {
                    let worker = self.next_worker()?;
                    if self.run_session(&worker).await?.is_none() {
                        tokio::time::sleep(Duration::from_millis(20)).await;
                    }
                }
                Phase::Preparing | Phase::Fitting => tokio::time::sleep(Duration::from_millis(50)).await,
            }
        }
    }
}
