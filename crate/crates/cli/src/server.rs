//! HTTP annotation service over [`AlSession`].
//!
//! Sessions live in memory. Each one sits behind its own mutex, so label
//! submissions are serialised per session while different sessions proceed
//! independently.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cpforge::active::{AlSession, SessionConfig, SessionError, SessionMetrics};
use cpforge::dataset::{write_labeled, LabelSource};
use cpforge::{ContentFeatures, Dataset, Label};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub struct ServerState {
    dataset: Arc<Dataset>,
    dataset_path: PathBuf,
    medoids: Vec<u64>,
    defaults: SessionConfig,
    sessions_dir: PathBuf,
    sessions: Mutex<BTreeMap<String, Arc<Mutex<AlSession>>>>,
    next_id: AtomicU64,
}

impl ServerState {
    pub fn new(
        dataset: Arc<Dataset>,
        dataset_path: PathBuf,
        medoids: Vec<u64>,
        defaults: SessionConfig,
        sessions_dir: PathBuf,
    ) -> Self {
        ServerState {
            dataset,
            dataset_path,
            medoids,
            defaults,
            sessions_dir,
            sessions: Mutex::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<AlSession>>, ApiError> {
        self.sessions
            .lock()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownSession", format!("no session {id:?}")))
    }

    fn accepts_dataset(&self, name: &str) -> bool {
        let p = Path::new(name);
        p == self.dataset_path || Some(p.as_os_str()) == self.dataset_path.file_name()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, message: String) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: error.to_string(),
                message,
            },
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "IoError", format!("{}: {e}", path.display()))
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, name) = match e {
            SessionError::BudgetExhausted(_) => (StatusCode::GONE, "BudgetExhausted"),
            SessionError::PoolEmpty => (StatusCode::GONE, "PoolEmpty"),
            SessionError::UnknownId(_) => (StatusCode::NOT_FOUND, "UnknownId"),
            SessionError::AlreadyLabeled(_) => (StatusCode::CONFLICT, "AlreadyLabeled"),
            SessionError::BudgetTooSmall { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "BudgetTooSmall"),
            SessionError::InvalidConfig(_) => (StatusCode::BAD_REQUEST, "InvalidConfig"),
        };
        ApiError::new(status, name, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(e.status(), "BadRequest", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub dataset: Option<String>,
    pub budget: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Query {
    pub segment_id: u64,
    pub grid: Vec<String>,
    pub features: ContentFeatures,
    pub queries_made: usize,
    pub budget: usize,
    pub holdout_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRequest {
    pub segment_id: u64,
    pub label: Label,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Finished {
    pub model: String,
    pub labels: String,
    pub metrics: SessionMetrics,
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "TaskFailed", e.to_string()))?
}

async fn healthz() -> &'static str {
    "ok"
}

async fn create_session(
    State(st): State<Arc<ServerState>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<Json<Created>, ApiError> {
    let Json(req) = body?;
    if let Some(name) = &req.dataset {
        if !st.accepts_dataset(name) {
            return Err(ApiError::new(
                StatusCode::NOT_FOUND,
                "UnknownDataset",
                format!("this server annotates {}", st.dataset_path.display()),
            ));
        }
    }
    let cfg = SessionConfig {
        budget: req.budget.unwrap_or(st.defaults.budget),
        seed: req.seed.unwrap_or(st.defaults.seed),
        ..st.defaults.clone()
    };
    let st2 = st.clone();
    let session = blocking(move || Ok(AlSession::new(st2.dataset.clone(), &st2.medoids, &cfg)?)).await?;
    let id = format!("s{}", st.next_id.fetch_add(1, Ordering::Relaxed));
    st.sessions
        .lock()
        .expect("session map poisoned")
        .insert(id.clone(), Arc::new(Mutex::new(session)));
    Ok(Json(Created { session_id: id }))
}

async fn next_query(
    State(st): State<Arc<ServerState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Query>, ApiError> {
    let session = st.session(&id)?;
    blocking(move || {
        let s = session.lock().expect("session poisoned");
        let segment_id = s.next_query()?;
        let record = s.dataset().get(segment_id).expect("query id from dataset");
        Ok(Json(Query {
            segment_id,
            grid: record.grid.to_rows(),
            features: record.features,
            queries_made: s.queries_made(),
            budget: s.budget(),
            holdout_accuracy: s.holdout_accuracy(),
        }))
    })
    .await
}

async fn submit_label(
    State(st): State<Arc<ServerState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<LabelRequest>, JsonRejection>,
) -> Result<Json<SessionMetrics>, ApiError> {
    let Json(req) = body?;
    let session = st.session(&id)?;
    blocking(move || {
        let mut s = session.lock().expect("session poisoned");
        Ok(Json(s.submit_label(req.segment_id, req.label, LabelSource::Human)?))
    })
    .await
}

async fn finish(
    State(st): State<Arc<ServerState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Finished>, ApiError> {
    let session = st.session(&id)?;
    let dir = st.sessions_dir.clone();
    blocking(move || {
        let s = session.lock().expect("session poisoned");
        std::fs::create_dir_all(&dir).map_err(|e| ApiError::io(&dir, e))?;
        let model = dir.join(format!("{id}.model.txt"));
        let labels = dir.join(format!("{id}.labels.jsonl"));
        s.model().save(&model).map_err(|e| ApiError::io(&model, e))?;
        let mut bytes = Vec::new();
        write_labeled(&s.labeled_records(), &mut bytes).map_err(|e| ApiError::io(&labels, e))?;
        std::fs::write(&labels, bytes).map_err(|e| ApiError::io(&labels, e))?;
        Ok(Json(Finished {
            model: model.display().to_string(),
            labels: labels.display().to_string(),
            metrics: s.metrics(),
        }))
    })
    .await
}

pub fn router(state: Arc<ServerState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/query", get(next_query))
        .route("/sessions/{id}/labels", post(submit_label))
        .route("/sessions/{id}/finish", post(finish))
        .with_state(state)
}

/// Binds `0.0.0.0:port` and serves until Ctrl-C.
pub async fn serve(state: Arc<ServerState>, port: u16) -> Result<()> {
    let addr = std::net::SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| AppError::io(Path::new(&addr.to_string()), e))?;
    eprintln!("annotation service listening on http://{addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| AppError::io(Path::new(&addr.to_string()), e))
}
