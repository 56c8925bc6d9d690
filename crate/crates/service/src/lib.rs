//! HTTP API over a file-backed data directory:
//!
//! ```text
//! <data_dir>/slides/<slide_id>/{meta.json, level_<L>/<col>_<row>.png, scores.json, ground_truth.json}
//! <data_dir>/sessions/<session_id>.{json, jsonl, report.json}
//! <data_dir>/eval/<slide_id>/<session_id>.json
//! ```

mod error;
mod sessions;
mod slides;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::routing::{get, post};
use axum::Router;
use navipath_core::evaluate::EvalConfig;
use navipath_core::recommend::RecConfig;
use navipath_core::scoring::ScoreGrid;
use navipath_core::slide::{GroundTruth, SlideMeta};
use navipath_core::FORMAT_VERSION;
use serde::Serialize;

pub use error::ApiError;

/// Default listen port.
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Clone)]
pub struct Config {
    pub data_dir: PathBuf,
    pub port: u16,
    pub rec: RecConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Config { data_dir: data_dir.into(), port: DEFAULT_PORT, rec: RecConfig::default(), eval: EvalConfig::default() }
    }

    pub fn slides_dir(&self) -> PathBuf {
        self.data_dir.join("slides")
    }

    pub fn sessions_dir(&self) -> PathBuf {
        self.data_dir.join("sessions")
    }
}

/// Read-only slide data loaded on first use.
struct SlideData {
    meta: SlideMeta,
    scores: Option<Arc<ScoreGrid>>,
    ground_truth: Option<Arc<GroundTruth>>,
}

pub struct AppState {
    config: Config,
    slides: RwLock<HashMap<String, Arc<SlideData>>>,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<sessions::SessionState>>>>,
}

impl AppState {
    pub fn new(config: Config) -> Arc<Self> {
        Arc::new(AppState { config, slides: RwLock::default(), sessions: Mutex::default() })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }
}

/// Ids become path components, so only `[A-Za-z0-9_.-]` is accepted and dot-only names are refused.
pub(crate) fn check_id(id: &str) -> Result<(), ApiError> {
    let ok = !id.is_empty()
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !id.chars().all(|c| c == '.');
    if ok {
        Ok(())
    } else {
        Err(ApiError::bad_request(format!("invalid id `{id}`")))
    }
}

pub(crate) fn slide_dir(root: &Path, id: &str) -> PathBuf {
    root.join(id)
}

/// Wraps a payload with the API format version.
#[derive(Serialize)]
pub(crate) struct Versioned<T: Serialize> {
    pub format_version: u32,
    #[serde(flatten)]
    pub inner: T,
}

pub(crate) fn versioned<T: Serialize>(inner: T) -> Versioned<T> {
    Versioned { format_version: FORMAT_VERSION, inner }
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
}

async fn healthz() -> axum::Json<Versioned<Health>> {
    axum::Json(versioned(Health { status: "ok" }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/api/slides", get(slides::list))
        .route("/api/slides/{id}/meta", get(slides::meta))
        .route("/api/slides/{id}/tiles/{level}/{tile}", get(slides::tile))
        .route("/api/slides/{id}/recommendations", get(slides::recommendations))
        .route("/api/sessions", post(sessions::create))
        .route("/api/sessions/{id}", get(sessions::get_session).patch(sessions::patch))
        .route("/api/sessions/{id}/events", post(sessions::post_event))
        .route("/api/sessions/{id}/report", post(sessions::post_report))
        .route("/api/sessions/{id}/metrics", get(sessions::metrics))
        .route("/api/sessions/{id}/close", post(sessions::close))
        .with_state(state)
}

/// Binds `0.0.0.0:<port>` (port 0 picks a free one) and serves until the process ends.
/// `on_bound` receives the actual address once listening.
pub async fn serve(config: Config, on_bound: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    std::fs::create_dir_all(config.slides_dir())?;
    std::fs::create_dir_all(config.sessions_dir())?;
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", config.port)).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(AppState::new(config))).await
}
