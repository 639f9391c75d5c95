//! HTTP facade over the recourse engine.
//!
//! Models are loaded once from a directory at start-up and never change. Every
//! JSON response carries `compute_ms`. Engine calls run on the blocking pool
//! behind a semaphore and a wall-clock cap; a request that hits the cap gets
//! `503` with `Retry-After`, while the abandoned computation finishes in the
//! background and releases its permit.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::sync::Semaphore;
use tower_http::cors::CorsLayer;

use recourse_core::io::{
    load_model, model_schema, model_summary, run_bounds, run_recourse, BoundsQuery, LoadedModel, ModelSummary,
    RecourseQuery,
};
use recourse_core::Error;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Immutable id → model registry. Ids are file stems.
#[derive(Debug, Default)]
pub struct ModelStore {
    models: BTreeMap<String, Arc<LoadedModel>>,
}

impl ModelStore {
    /// Loads every `*.json` file in `dir`. Any invalid file aborts the load.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, Error> {
        let dir = dir.as_ref();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        let mut store = Self::default();
        for entry in entries {
            let path = entry.map_err(|e| Error::Io(e.to_string()))?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                store.insert(id, load_model(&path)?);
                log::info!("loaded model '{}' from {}", path.file_stem().unwrap_or_default().to_string_lossy(), path.display());
            }
        }
        Ok(store)
    }

    pub fn insert(&mut self, id: impl Into<String>, model: LoadedModel) {
        self.models.insert(id.into(), Arc::new(model));
    }

    pub fn get(&self, id: &str) -> Option<Arc<LoadedModel>> {
        self.models.get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn summaries(&self) -> Vec<ModelSummary> {
        self.models.iter().map(|(id, m)| model_summary(id, m)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Wall-clock cap per engine call, including the wait for a permit.
    pub timeout: Duration,
    pub max_concurrent: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            max_concurrent: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    store: Arc<ModelStore>,
    permits: Arc<Semaphore>,
    timeout: Duration,
}

impl AppState {
    pub fn new(store: ModelStore, config: ServiceConfig) -> Self {
        Self {
            store: Arc::new(store),
            permits: Arc::new(Semaphore::new(config.max_concurrent.max(1))),
            timeout: config.timeout,
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/models", get(list_models))
        .route("/models/{id}", get(get_model))
        .route("/models/{id}/bounds", post(bounds))
        .route("/models/{id}/recourse", post(recourse))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no such route") })
        .layer(CorsLayer::permissive())
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

/// A response body with its compute time appended.
#[derive(Serialize)]
struct Timed<T> {
    #[serde(flatten)]
    body: T,
    compute_ms: f64,
}

fn timed<T: Serialize>(body: T, started: Instant) -> Response {
    let compute_ms = started.elapsed().as_secs_f64() * 1e3;
    Json(Timed { body, compute_ms }).into_response()
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    retry_after_s: Option<u64>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { error: message.into(), id: None, retry_after_s: None } }
    }

    fn unknown_model(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown model '{id}'"))
    }

    fn busy(timeout: Duration) -> Self {
        let mut e = Self::new(StatusCode::SERVICE_UNAVAILABLE, "computation exceeded the time limit");
        e.body.retry_after_s = Some(timeout.as_secs().max(1));
        e
    }

    /// Logged in full; the client only sees an opaque id.
    fn internal(detail: &str) -> Self {
        let id = uuid::Uuid::new_v4().to_string();
        log::error!("internal error {id}: {detail}");
        let mut e = Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal error");
        e.body.id = Some(id);
        e
    }
}

impl From<Error> for ApiError {
    fn from(err: Error) -> Self {
        match &err {
            Error::Infeasible(_) | Error::Normalisation { .. } => Self::new(StatusCode::CONFLICT, err.to_string()),
            Error::Internal(detail) | Error::Io(detail) => Self::internal(detail),
            _ => Self::new(StatusCode::UNPROCESSABLE_ENTITY, err.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let retry = self.body.retry_after_s;
        let mut response = (self.status, Json(self.body)).into_response();
        if let Some(secs) = retry {
            response.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from(secs));
        }
        response
    }
}

fn parse_body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let message = if path.is_empty() || path == "." { inner.to_string() } else { format!("{path}: {inner}") };
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    })
}

/// Runs `job` on the blocking pool under the concurrency and time limits.
async fn compute<T, F>(state: &AppState, job: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> recourse_core::Result<T> + Send + 'static,
{
    let permits = state.permits.clone();
    let work = async move {
        let permit = permits.acquire_owned().await.map_err(|e| ApiError::internal(&e.to_string()))?;
        let handle = tokio::task::spawn_blocking(move || {
            let _permit = permit;
            job()
        });
        match handle.await {
            Ok(result) => result.map_err(ApiError::from),
            Err(e) => Err(ApiError::internal(&format!("engine task failed: {e}"))),
        }
    };
    tokio::time::timeout(state.timeout, work).await.unwrap_or_else(|_| Err(ApiError::busy(state.timeout)))
}

async fn health() -> Response {
    let started = Instant::now();
    timed(serde_json::json!({ "status": "ok" }), started)
}

async fn list_models(State(state): State<AppState>) -> Response {
    let started = Instant::now();
    timed(serde_json::json!({ "models": state.store.summaries() }), started)
}

async fn get_model(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let started = Instant::now();
    let model = state.store.get(&id).ok_or_else(|| ApiError::unknown_model(&id))?;
    Ok(timed(model_schema(&id, &model), started))
}

async fn bounds(State(state): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> Result<Response, ApiError> {
    let started = Instant::now();
    let model = state.store.get(&id).ok_or_else(|| ApiError::unknown_model(&id))?;
    let query: BoundsQuery = parse_body(&body)?;
    let report = compute(&state, move || run_bounds(&model, &query)).await?;
    Ok(timed(report, started))
}

async fn recourse(State(state): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> Result<Response, ApiError> {
    let started = Instant::now();
    let model = state.store.get(&id).ok_or_else(|| ApiError::unknown_model(&id))?;
    let query: RecourseQuery = parse_body(&body)?;
    let report = compute(&state, move || run_recourse(&model, &query)).await?;
    Ok(timed(report, started))
}
