//! HTTP collection service.
//!
//! Request handlers only touch the shared [`Collector`]; the iteration loop
//! runs on its own thread so fits never block requests.

use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hsj_core::service::{
    CollectError, Collector, CollectorStatus, IterationReport, ParticipantTrial, Pipeline, SessionDescriptor,
    SubmitRequest, SubmitResponse,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Preparing,
    Collecting,
    Fitting,
    Finished,
    Failed,
}

#[derive(Debug)]
pub struct ServerState {
    pub iteration: u32,
    pub target_iterations: u32,
    pub phase: Phase,
    pub collector: Option<Collector>,
    pub report: Option<IterationReport>,
    pub error: Option<String>,
    pub shutdown: bool,
}

#[derive(Debug)]
pub struct Shared {
    state: Mutex<ServerState>,
    changed: Condvar,
}

impl Shared {
    pub fn new(target_iterations: u32) -> Arc<Self> {
        Arc::new(Shared {
            state: Mutex::new(ServerState {
                iteration: 0,
                target_iterations,
                phase: Phase::Preparing,
                collector: None,
                report: None,
                error: None,
                shutdown: false,
            }),
            changed: Condvar::new(),
        })
    }

    pub fn lock(&self) -> MutexGuard<'_, ServerState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn update(&self, f: impl FnOnce(&mut ServerState)) {
        f(&mut self.lock());
        self.changed.notify_all();
    }

    /// Asks the scheduler thread to stop at its next wait.
    pub fn shutdown(&self) {
        self.update(|s| s.shutdown = true);
    }

    pub fn status(&self) -> StatusResponse {
        let s = self.lock();
        StatusResponse {
            iteration: s.iteration,
            target_iterations: s.target_iterations,
            phase: s.phase,
            collection: s.collector.as_ref().map(Collector::status),
            report: s.report.clone(),
            error: s.error.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusResponse {
    pub iteration: u32,
    pub target_iterations: u32,
    pub phase: Phase,
    pub collection: Option<CollectorStatus>,
    /// Latest finished iteration.
    pub report: Option<IterationReport>,
    pub error: Option<String>,
}

/// Runs iterations until `target` exist, parking during collection until
/// every session has a premium completion.
fn run_scheduler(shared: &Shared, pipeline: &mut Pipeline, target: u32, lease: Duration) -> anyhow::Result<()> {
    let last = pipeline.next_iteration().checked_sub(1);
    if let Some(t) = last {
        let report = pipeline.load_report(t)?;
        shared.update(|s| s.report = report);
    }
    loop {
        let t = pipeline.next_iteration();
        if t >= target {
            return Ok(());
        }
        shared.update(|s| {
            s.iteration = t;
            s.phase = Phase::Preparing;
        });
        if let Some(plan) = pipeline.prepare(t)? {
            let mut collector = Collector::new(pipeline.store().catalog().clone(), pipeline.ineligible_workers()?)
                .with_lease(lease);
            collector.enqueue(plan)?;
            shared.update(|s| {
                s.collector = Some(collector);
                s.phase = Phase::Collecting;
            });
            let completed = {
                let mut guard = shared.lock();
                loop {
                    anyhow::ensure!(!guard.shutdown, "shut down during collection");
                    if guard.collector.as_ref().is_some_and(Collector::is_done) {
                        break;
                    }
                    guard = shared
                        .changed
                        .wait_timeout(guard, Duration::from_millis(500))
                        .unwrap_or_else(|e| e.into_inner())
                        .0;
                }
                guard.phase = Phase::Fitting;
                let mut collector = guard.collector.take().expect("checked above");
                collector.take_results().0
            };
            pipeline.commit_collection(t, completed)?;
        }
        shared.update(|s| s.phase = Phase::Fitting);
        let (ensemble, losses) = pipeline.fit(t)?;
        let report = pipeline.report(t, &ensemble, losses)?;
        shared.update(|s| s.report = Some(report));
    }
}

/// Starts the iteration loop on a dedicated thread.
pub fn spawn_scheduler(
    shared: Arc<Shared>,
    mut pipeline: Pipeline,
    target: u32,
    lease: Duration,
) -> JoinHandle<anyhow::Result<()>> {
    std::thread::spawn(move || {
        let result = run_scheduler(&shared, &mut pipeline, target, lease);
        shared.update(|s| match &result {
            Ok(()) => s.phase = Phase::Finished,
            Err(e) => {
                s.phase = Phase::Failed;
                s.error = Some(format!("{e:#}"));
            }
        });
        result
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartRequest {
    pub worker_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub struct ApiError(CollectError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status_code()).expect("valid status");
        (status, Json(ErrorBody { error: self.0.to_string() })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn with_collector<T>(
    shared: &Shared,
    missing: CollectError,
    f: impl FnOnce(&mut Collector) -> Result<T, CollectError>,
) -> ApiResult<T> {
    let result = {
        let mut s = shared.lock();
        match s.collector.as_mut() {
            Some(c) => f(c),
            None => Err(missing),
        }
    };
    shared.changed.notify_all();
    result.map(Json).map_err(ApiError)
}

async fn start_session(State(shared): State<Arc<Shared>>, Json(body): Json<StartRequest>) -> ApiResult<SessionDescriptor> {
    if body.worker_hash.trim().is_empty() {
        return Err(ApiError(CollectError::Validation("worker_hash must not be empty".into())));
    }
    {
        let s = shared.lock();
        let ineligible = match &s.collector {
            Some(c) => !c.is_eligible(&body.worker_hash),
            None => false,
        };
        if ineligible {
            return Err(ApiError(CollectError::Ineligible(body.worker_hash)));
        }
    }
    with_collector(&shared, CollectError::NoSessions, |c| {
        c.start_session(&body.worker_hash, std::time::Instant::now())
    })
}

async fn get_trial(State(shared): State<Arc<Shared>>, Path((id, slot)): Path<(String, usize)>) -> ApiResult<ParticipantTrial> {
    with_collector(&shared, CollectError::NotFound(format!("no active session {id}")), |c| c.trial(&id, slot))
}

async fn submit_trial(
    State(shared): State<Arc<Shared>>,
    Path((id, slot)): Path<(String, usize)>,
    Json(body): Json<SubmitRequest>,
) -> ApiResult<SubmitResponse> {
    with_collector(&shared, CollectError::NotFound(format!("no active session {id}")), |c| {
        c.submit(&id, slot, &[body.first, body.second], body.duration_s)
    })
}

async fn status(State(shared): State<Arc<Shared>>) -> Json<StatusResponse> {
    Json(shared.status())
}

pub fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/v1/sessions", post(start_session))
        .route("/v1/sessions/{id}/trials/{slot}", get(get_trial).post(submit_trial))
        .route("/v1/status", get(status))
        .with_state(shared)
}
