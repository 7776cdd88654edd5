//! Versioned HTTP routes over a shared [`Platform`].
//!
//! Participant routes authenticate with the participant's bearer token and
//! act on that participant only. Report and job routes take an analyst token.
//! Mutating routes honour an `x-request-id` header: a repeated id returns the
//! stored response without touching the platform again.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use moods_core::annotations::{AnnotationPatch, ManualReport};
use moods_core::domain::{EventId, ParticipantId, PhysiologicalEvent, StressRatingLevel, Timestamp};
use moods_core::events::PromptDecision;
use moods_core::platform::Platform;
use moods_core::survey::SurveyResponse;
use moods_core::viz::sha256_hex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::GatewayConfig;
use crate::error::{ErrorBody, GatewayError, Result};
use crate::reports::{run_analysis, AnalysisDocument, AnalysisKind, AnalysisParams};

pub const REQUEST_ID_HEADER: &str = "x-request-id";
pub const REPLAY_HEADER: &str = "idempotent-replay";
const DEFAULT_SUGGESTIONS: usize = 5;
const MAX_SUGGESTIONS: usize = 50;
const IDEMPOTENCY_CAPACITY: usize = 65_536;

pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs() as Timestamp)
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Principal {
    Participant(ParticipantId),
    Analyst,
}

#[derive(Clone)]
struct Stored {
    fingerprint: String,
    status: StatusCode,
    body: Value,
}

#[derive(Default)]
struct Idempotency {
    slots: Mutex<HashMap<String, Arc<Mutex<Option<Stored>>>>>,
    order: Mutex<VecDeque<String>>,
}

impl Idempotency {
    fn slot(&self, key: &str) -> Arc<Mutex<Option<Stored>>> {
        let mut slots = self.slots.lock().unwrap();
        if let Some(s) = slots.get(key) {
            return s.clone();
        }
        let mut order = self.order.lock().unwrap();
        if order.len() >= IDEMPOTENCY_CAPACITY {
            if let Some(old) = order.pop_front() {
                slots.remove(&old);
            }
        }
        order.push_back(key.to_string());
        slots.entry(key.to_string()).or_default().clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: u64,
    pub analysis: AnalysisKind,
    pub status: JobStatus,
    pub submitted_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<AnalysisDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

#[derive(Default)]
struct Jobs {
    next: AtomicU64,
    records: Mutex<BTreeMap<u64, JobRecord>>,
}

struct Inner {
    platform: Arc<Platform>,
    tokens: BTreeMap<String, Principal>,
    clock: Clock,
    idempotency: Idempotency,
    jobs: Jobs,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Builds the state and enrols every configured participant that has an
    /// enrolment day.
    pub fn new(platform: Arc<Platform>, cfg: &GatewayConfig, clock: Clock) -> Result<Self> {
        cfg.validate()?;
        let mut tokens = BTreeMap::new();
        for p in &cfg.participants {
            let id = ParticipantId::from(p.id.as_str());
            if let Some(day) = p.enrollment_day {
                platform.enroll(id.clone(), day, p.tz_offset_min)?;
            }
            tokens.insert(p.token.clone(), Principal::Participant(id));
        }
        for t in &cfg.analyst_tokens {
            tokens.insert(t.clone(), Principal::Analyst);
        }
        Ok(Self(Arc::new(Inner { platform, tokens, clock, idempotency: Idempotency::default(), jobs: Jobs::default() })))
    }

    pub fn platform(&self) -> &Arc<Platform> {
        &self.0.platform
    }

    pub fn now(&self) -> Timestamp {
        (self.0.clock)()
    }

    fn principal(&self, headers: &HeaderMap) -> Result<Principal> {
        let token = headers
            .get(axum::http::header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or(GatewayError::Unauthorized)?;
        self.0.tokens.get(token.trim()).cloned().ok_or(GatewayError::Unauthorized)
    }

    /// Runs `op` once per `(caller, request id)`; replays the stored response
    /// for a repeated id and rejects an id reused for a different request.
    fn mutate(
        &self,
        caller: &str,
        route: &str,
        headers: &HeaderMap,
        body: &impl Serialize,
        op: impl FnOnce() -> Result<(StatusCode, Value)>,
    ) -> Response {
        let Some(rid) = headers.get(REQUEST_ID_HEADER).and_then(|v| v.to_str().ok()).filter(|v| !v.is_empty()) else {
            return respond(op());
        };
        let fingerprint = match serde_json::to_vec(body) {
            Ok(bytes) => sha256_hex(&[route.as_bytes(), b"\n", &bytes].concat()),
            Err(e) => return GatewayError::from(e).into_response(),
        };
        let slot = self.0.idempotency.slot(&format!("{caller}\n{rid}"));
        let mut slot = slot.lock().unwrap();
        if let Some(s) = slot.as_ref() {
            if s.fingerprint != fingerprint {
                return GatewayError::RequestIdReused(rid.to_string()).into_response();
            }
            let mut r = (s.status, Json(s.body.clone())).into_response();
            r.headers_mut().insert(REPLAY_HEADER, HeaderValue::from_static("true"));
            return r;
        }
        let (status, body) = match op() {
            Ok(ok) => ok,
            Err(e) => (e.status(), serde_json::to_value(e.body()).expect("error body serializes")),
        };
        if !status.is_server_error() {
            *slot = Some(Stored { fingerprint, status, body: body.clone() });
        }
        (status, Json(body)).into_response()
    }

    fn start_job(&self, analysis: AnalysisKind, params: AnalysisParams) -> JobRecord {
        let jobs = &self.0.jobs;
        let job_id = jobs.next.fetch_add(1, Ordering::Relaxed) + 1;
        let record = JobRecord { job_id, analysis, status: JobStatus::Running, submitted_at: self.now(), result: None, error: None };
        jobs.records.lock().unwrap().insert(job_id, record.clone());
        let state = self.clone();
        tokio::task::spawn_blocking(move || {
            let out = run_analysis(analysis, &params, &state.platform().snapshots());
            let mut records = state.0.jobs.records.lock().unwrap();
            let r = records.get_mut(&job_id).expect("job registered before start");
            match out {
                Ok(doc) => {
                    r.status = JobStatus::Done;
                    r.result = Some(doc);
                }
                Err(e) => {
                    r.status = JobStatus::Failed;
                    r.error = Some(GatewayError::from(e).body());
                }
            }
        });
        record
    }
}

fn respond(r: Result<(StatusCode, Value)>) -> Response {
    match r {
        Ok((status, body)) => (status, Json(body)).into_response(),
        Err(e) => e.into_response(),
    }
}

fn ok(value: impl Serialize) -> Result<(StatusCode, Value)> {
    Ok((StatusCode::OK, serde_json::to_value(value)?))
}

/// A participant authenticated by bearer token.
pub struct Caller(pub ParticipantId);

impl FromRequestParts<AppState> for Caller {
    type Rejection = GatewayError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self> {
        match state.principal(&parts.headers)? {
            Principal::Participant(id) => Ok(Caller(id)),
            Principal::Analyst => Err(GatewayError::Forbidden("participant token required".into())),
        }
    }
}

/// A caller holding an analyst token.
pub struct Analyst;

impl FromRequestParts<AppState> for Analyst {
    type Rejection = GatewayError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self> {
        match state.principal(&parts.headers)? {
            Principal::Analyst => Ok(Analyst),
            Principal::Participant(_) => Err(GatewayError::Forbidden("analyst token required".into())),
        }
    }
}

/// JSON body whose rejections use the error body format.
pub struct ApiJson<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for ApiJson<T> {
    type Rejection = GatewayError;

    async fn from_request(req: Request, state: &S) -> Result<Self> {
        Json::<T>::from_request(req, state).await.map(|Json(v)| ApiJson(v)).map_err(|e| GatewayError::BadRequest(e.body_text()))
    }
}

pub struct ApiQuery<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequestParts<S> for ApiQuery<T> {
    type Rejection = GatewayError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self> {
        Query::<T>::from_request_parts(parts, state).await.map(|Query(v)| ApiQuery(v)).map_err(|e| GatewayError::BadRequest(e.body_text()))
    }
}

pub struct ApiPath<T>(pub T);

impl<T: DeserializeOwned + Send, S: Send + Sync> FromRequestParts<S> for ApiPath<T> {
    type Rejection = GatewayError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self> {
        Path::<T>::from_request_parts(parts, state).await.map(|Path(v)| ApiPath(v)).map_err(|e| GatewayError::BadRequest(e.body_text()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRequest {
    pub event_id: EventId,
    pub rating: StressRatingLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub event_id: EventId,
    pub stressor_text: String,
    #[serde(default)]
    pub semantic_location: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRequest {
    pub week_index: u32,
    #[serde(flatten)]
    pub response: SurveyResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRequest {
    pub analysis: AnalysisKind,
    #[serde(flatten)]
    pub params: AnalysisParams,
}

#[derive(Debug, Clone, Deserialize)]
struct AutocompleteQuery {
    #[serde(default)]
    q: String,
    #[serde(default)]
    limit: Option<usize>,
}

fn decision_json(d: PromptDecision) -> Value {
    let (name, ticket) = match d {
        PromptDecision::Issued(t) => ("issued", Some(t)),
        PromptDecision::NotSelected => ("not_selected", None),
        PromptDecision::Deferred => ("deferred", None),
        PromptDecision::SuppressedBudget => ("suppressed_budget", None),
        PromptDecision::SuppressedRefractory => ("suppressed_refractory", None),
        PromptDecision::Duplicate(t) => ("duplicate", t),
    };
    json!({ "decision": name, "ticket": ticket })
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn post_event(
    State(state): State<AppState>,
    Caller(pid): Caller,
    headers: HeaderMap,
    ApiJson(event): ApiJson<PhysiologicalEvent>,
) -> Response {
    state.mutate(pid.as_str(), "POST /v1/events", &headers, &event, || {
        if event.participant_id != pid {
            return Err(GatewayError::Forbidden(format!("event belongs to {}", event.participant_id)));
        }
        Ok((StatusCode::OK, decision_json(state.platform().ingest_event(event.clone(), state.now())?)))
    })
}

async fn pending_prompts(State(state): State<AppState>, Caller(pid): Caller) -> Response {
    respond(state.platform().pending_prompts(&pid, state.now()).map_err(Into::into).and_then(|p| ok(json!({ "prompts": p }))))
}

async fn post_rating(
    State(state): State<AppState>,
    Caller(pid): Caller,
    headers: HeaderMap,
    ApiJson(req): ApiJson<RatingRequest>,
) -> Response {
    state.mutate(pid.as_str(), "POST /v1/ratings", &headers, &req, || {
        ok(state.platform().submit_rating(&pid, &req.event_id, req.rating, state.now())?)
    })
}

async fn autocomplete(
    State(state): State<AppState>,
    Caller(pid): Caller,
    ApiQuery(q): ApiQuery<AutocompleteQuery>,
) -> Response {
    let limit = q.limit.unwrap_or(DEFAULT_SUGGESTIONS).min(MAX_SUGGESTIONS);
    respond(
        state
            .platform()
            .autocomplete(&pid, &q.q, limit)
            .map_err(Into::into)
            .and_then(|s| ok(json!({ "query": q.q, "suggestions": s }))),
    )
}

async fn post_annotation(
    State(state): State<AppState>,
    Caller(pid): Caller,
    headers: HeaderMap,
    ApiJson(req): ApiJson<AnnotationRequest>,
) -> Response {
    state.mutate(pid.as_str(), "POST /v1/annotations", &headers, &req, || {
        ok(state.platform().complete_annotation(
            &pid,
            &req.event_id,
            &req.stressor_text,
            req.semantic_location.clone(),
            state.now(),
        )?)
    })
}

async fn patch_annotation(
    State(state): State<AppState>,
    Caller(pid): Caller,
    ApiPath(event_id): ApiPath<String>,
    headers: HeaderMap,
    ApiJson(p): ApiJson<AnnotationPatch>,
) -> Response {
    let route = format!("PATCH /v1/annotations/{event_id}");
    state.mutate(pid.as_str(), &route, &headers, &p, || {
        ok(state.platform().edit_annotation(&pid, &EventId::from(event_id.as_str()), p.clone(), state.now())?)
    })
}

async fn post_manual(
    State(state): State<AppState>,
    Caller(pid): Caller,
    headers: HeaderMap,
    ApiJson(report): ApiJson<ManualReport>,
) -> Response {
    state.mutate(pid.as_str(), "POST /v1/annotations/manual", &headers, &report, || {
        let a = state.platform().manual_report(&pid, report.clone(), state.now())?;
        Ok((StatusCode::CREATED, serde_json::to_value(a)?))
    })
}

async fn dashboard(State(state): State<AppState>, Caller(pid): Caller) -> Response {
    respond(state.platform().dashboard(&pid).map_err(Into::into).and_then(|e| ok(json!({ "entries": e }))))
}

async fn visualizations(
    State(state): State<AppState>,
    Caller(pid): Caller,
    ApiPath(week): ApiPath<u32>,
) -> Response {
    respond(
        state
            .platform()
            .visualizations(&pid, week)
            .map_err(Into::into)
            .and_then(|b| ok(json!({ "manifest": b.manifest(), "charts": b.charts }))),
    )
}

async fn current_survey(State(state): State<AppState>, Caller(pid): Caller) -> Response {
    respond(state.platform().current_survey(&pid, state.now()).map_err(Into::into).and_then(|s| ok(json!({ "survey": s }))))
}

async fn post_survey(
    State(state): State<AppState>,
    Caller(pid): Caller,
    headers: HeaderMap,
    ApiJson(req): ApiJson<SurveyRequest>,
) -> Response {
    state.mutate(pid.as_str(), "POST /v1/surveys", &headers, &req, || {
        ok(state.platform().submit_survey(&pid, req.week_index, req.response.clone(), state.now())?)
    })
}

async fn report(
    State(state): State<AppState>,
    _: Analyst,
    ApiPath(kind): ApiPath<String>,
    ApiQuery(params): ApiQuery<AnalysisParams>,
) -> Response {
    let kind: AnalysisKind = match kind.parse() {
        Ok(k) => k,
        Err(e) => return GatewayError::Core(e).into_response(),
    };
    let platform = state.platform().clone();
    let out = tokio::task::spawn_blocking(move || run_analysis(kind, &params, &platform.snapshots())).await;
    match out {
        Ok(r) => respond(r.map_err(Into::into).and_then(ok)),
        Err(e) => GatewayError::Config(format!("analysis task failed: {e}")).into_response(),
    }
}

async fn post_job(
    State(state): State<AppState>,
    _: Analyst,
    headers: HeaderMap,
    ApiJson(req): ApiJson<JobRequest>,
) -> Response {
    state.mutate("analyst", "POST /v1/jobs", &headers, &req, || {
        Ok((StatusCode::ACCEPTED, serde_json::to_value(state.start_job(req.analysis, req.params.clone()))?))
    })
}

async fn get_job(State(state): State<AppState>, _: Analyst, ApiPath(id): ApiPath<u64>) -> Response {
    let record = state.0.jobs.records.lock().unwrap().get(&id).cloned();
    match record {
        Some(r) => respond(ok(r)),
        None => GatewayError::Core(moods_core::CoreError::NotFound(format!("job {id}"))).into_response(),
    }
}

async fn fallback() -> GatewayError {
    GatewayError::Core(moods_core::CoreError::NotFound("route".into()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/events", post(post_event))
        .route("/v1/prompts/pending", get(pending_prompts))
        .route("/v1/ratings", post(post_rating))
        .route("/v1/autocomplete", get(autocomplete))
        .route("/v1/annotations", post(post_annotation))
        .route("/v1/annotations/manual", post(post_manual))
        .route("/v1/annotations/{event_id}", patch(patch_annotation))
        .route("/v1/dashboard", get(dashboard))
        .route("/v1/visualizations/{week}", get(visualizations))
        .route("/v1/surveys/current", get(current_survey))
        .route("/v1/surveys", post(post_survey))
        .route("/v1/reports/{kind}", get(report))
        .route("/v1/jobs", post(post_job))
        .route("/v1/jobs/{id}", get(get_job))
        .fallback(fallback)
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
