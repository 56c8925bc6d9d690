use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use navipath_core::evaluate::{trial_metrics, Report};
use navipath_core::navigate::{append_line, read_jsonl, Condition, NavEvent, NavError, SessionMeta, SessionStatus};
use navipath_core::recommend::Weights;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::slides::load_slide;
use crate::{check_id, versioned, ApiError, AppState, Versioned};

pub(crate) struct SessionState {
    meta: SessionMeta,
    last_t: Option<u64>,
    n_events: usize,
}

struct Paths {
    meta: PathBuf,
    trace: PathBuf,
    report: PathBuf,
}

fn paths(state: &AppState, id: &str) -> Paths {
    let dir = state.config.sessions_dir();
    Paths {
        meta: dir.join(format!("{id}.json")),
        trace: dir.join(format!("{id}.jsonl")),
        report: dir.join(format!("{id}.report.json")),
    }
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

/// Session handle from the in-memory table, falling back to its files on disk.
fn session(state: &AppState, id: &str) -> Result<Arc<tokio::sync::Mutex<SessionState>>, ApiError> {
    check_id(id)?;
    let mut table = state.sessions.lock().expect("session table");
    if let Some(s) = table.get(id) {
        return Ok(s.clone());
    }
    let p = paths(state, id);
    if !p.meta.is_file() {
        return Err(ApiError::not_found(format!("unknown session `{id}`")));
    }
    let meta = SessionMeta::load(&p.meta)?;
    let events = if p.trace.is_file() { read_jsonl(&p.trace)? } else { Vec::new() };
    let s = Arc::new(tokio::sync::Mutex::new(SessionState {
        meta,
        last_t: events.last().map(|e| e.t),
        n_events: events.len(),
    }));
    table.insert(id.to_string(), s.clone());
    Ok(s)
}

#[derive(Deserialize)]
pub(crate) struct CreateSession {
    slide_id: String,
    condition: Condition,
}

pub(crate) async fn create(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = parse_body(&body)?;
    load_slide(&state, &req.slide_id)?;
    let id = uuid::Uuid::new_v4().to_string();
    let created_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let meta = SessionMeta::new(id.clone(), req.slide_id, req.condition, created_at);
    let p = paths(&state, &id);
    fs::create_dir_all(state.config.sessions_dir())?;
    meta.save(&p.meta)?;
    fs::File::create(&p.trace)?;
    let s = SessionState { meta: meta.clone(), last_t: None, n_events: 0 };
    state.sessions.lock().expect("session table").insert(id, Arc::new(tokio::sync::Mutex::new(s)));
    Ok((StatusCode::CREATED, Json(meta)).into_response())
}

pub(crate) async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionMeta>, ApiError> {
    let s = session(&state, &id)?;
    let s = s.lock().await;
    Ok(Json(s.meta.clone()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct PatchSession {
    weights: Weights,
}

/// Persists the session's last-used weights.
pub(crate) async fn patch(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Result<Json<SessionMeta>, ApiError> {
    let req: PatchSession = parse_body(&body)?;
    req.weights.validate()?;
    let s = session(&state, &id)?;
    let mut s = s.lock().await;
    s.meta.weights = req.weights;
    s.meta.save(&paths(&state, &id).meta)?;
    Ok(Json(s.meta.clone()))
}

pub(crate) async fn close(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionMeta>, ApiError> {
    let s = session(&state, &id)?;
    let mut s = s.lock().await;
    s.meta.status = SessionStatus::Closed;
    s.meta.save(&paths(&state, &id).meta)?;
    Ok(Json(s.meta.clone()))
}

#[derive(Serialize)]
pub(crate) struct EventAck {
    index: usize,
    t: u64,
}

/// Appends one event; history is never rewritten.
pub(crate) async fn post_event(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Versioned<EventAck>>, ApiError> {
    let ev: NavEvent = parse_body(&body)?;
    ev.viewport.validate()?;
    let s = session(&state, &id)?;
    let mut s = s.lock().await;
    if s.meta.status == SessionStatus::Closed {
        return Err(ApiError::conflict(format!("session `{id}` is closed")));
    }
    if let Some(last) = s.last_t {
        if ev.t < last {
            return Err(NavError::TimeRegression { t: ev.t, last }.into());
        }
    }
    let mut file = OpenOptions::new().create(true).append(true).open(paths(&state, &id).trace)?;
    append_line(&mut file, &ev)?;
    file.flush()?;
    s.last_t = Some(ev.t);
    s.n_events += 1;
    Ok(Json(versioned(EventAck { index: s.n_events - 1, t: ev.t })))
}

#[derive(Serialize)]
pub(crate) struct ReportAck {
    n_points: usize,
}

/// Stores the session's report, replacing any earlier submission.
pub(crate) async fn post_report(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Versioned<ReportAck>>, ApiError> {
    let report: Report = parse_body(&body)?;
    let s = session(&state, &id)?;
    let s = s.lock().await;
    let slide = load_slide(&state, &s.meta.slide_id)?;
    if report.slide_id.as_deref().is_some_and(|r| r != s.meta.slide_id) {
        return Err(ApiError::bad_request(format!("report is for another slide than `{}`", s.meta.slide_id)));
    }
    report.validate(&slide.meta)?;
    fs::write(paths(&state, &id).report, serde_json::to_vec_pretty(&report).expect("report serialises"))?;
    Ok(Json(versioned(ReportAck { n_points: report.points.len() })))
}

/// Trial metrics computed from the persisted trace and report; the body is
/// exactly [`navipath_core::evaluate::TrialMetrics::to_json`].
pub(crate) async fn metrics(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = session(&state, &id)?;
    let s = s.lock().await;
    let p = paths(&state, &id);
    if s.n_events == 0 {
        return Err(ApiError::conflict(format!("session `{id}` has no events")));
    }
    if !p.report.is_file() {
        return Err(ApiError::conflict(format!("session `{id}` has no report yet")));
    }
    let slide = load_slide(&state, &s.meta.slide_id)?;
    let gt = slide
        .ground_truth
        .as_ref()
        .ok_or_else(|| ApiError::not_found(format!("slide `{}` has no ground truth", s.meta.slide_id)))?;
    let report: Report = serde_json::from_slice(&fs::read(&p.report)?).map_err(|e| ApiError::internal(e.to_string()))?;
    let events = read_jsonl(&p.trace)?;
    let m = trial_metrics(&events, &report, gt, &slide.meta, &state.config.eval)?;
    m.save(&state.config.data_dir, &s.meta.slide_id, &id)?;
    Ok(([(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))], m.to_json()).into_response())
}
