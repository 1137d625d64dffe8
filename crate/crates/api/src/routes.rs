//! `/v1` HTTP surface.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use needle_core::catalog::CatalogError;
use needle_core::config::backend_versions;
use needle_core::fusion::FusionError;
use needle_core::genhub::GenError;
use needle_core::ingest::IngestError;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tokio::sync::{watch, Semaphore};
use tower_http::cors::CorsLayer;

use crate::backend::{Backend, BackendError};
use crate::wire::{AddDirectory, Cause, ErrorBody, PatchDirectory, PatchGenerators, QueryRequest, Versions};

#[derive(Clone)]
pub struct AppState {
    pub backend: Arc<Backend>,
    queries: Arc<Semaphore>,
    stop: watch::Sender<bool>,
}

impl AppState {
    pub fn new(backend: Arc<Backend>, stop: watch::Sender<bool>) -> Self {
        let queries = Arc::new(Semaphore::new(backend.query_limit()));
        Self { backend, queries, stop }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/version", get(version))
        .route("/v1/status", get(status))
        .route("/v1/query", post(query))
        .route("/v1/directories", get(list_directories).post(add_directory))
        .route(
            "/v1/directories/{id}",
            get(get_directory).patch(patch_directory).delete(delete_directory),
        )
        .route("/v1/generators", get(get_generators).patch(patch_generators))
        .route("/v1/images/{id}", get(image))
        .route("/v1/shutdown", post(shutdown))
        .route("/v1/faults", post(fault))
        // the web UI is served from its own origin
        .layer(CorsLayer::permissive())
        .with_state(state)
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                message: message.into(),
                causes: Vec::new(),
            },
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn catalog_error(e: &CatalogError) -> ApiError {
    let msg = e.to_string();
    match e {
        CatalogError::PathNotFound(_) => ApiError::new(StatusCode::BAD_REQUEST, "PathNotFound", msg),
        CatalogError::NotADirectory(_) => ApiError::new(StatusCode::BAD_REQUEST, "NotADirectory", msg),
        CatalogError::PermissionDenied(_) => {
            ApiError::new(StatusCode::BAD_REQUEST, "PermissionDenied", msg)
        }
        CatalogError::UnknownDirectory(_) => {
            ApiError::new(StatusCode::NOT_FOUND, "UnknownDirectory", msg)
        }
        _ => ApiError::internal(msg),
    }
}

fn gen_error(e: &GenError, backend: &Backend) -> ApiError {
    let msg = e.to_string();
    match e {
        GenError::AllEnginesFailed(causes) => ApiError {
            status: StatusCode::SERVICE_UNAVAILABLE,
            body: ErrorBody {
                error: "AllEnginesFailed".into(),
                message: msg,
                causes: causes
                    .iter()
                    .map(|c| Cause {
                        engine: c.engine.clone(),
                        reason: c.cause.to_string(),
                    })
                    .collect(),
            },
        },
        GenError::NoEnabledEngines => ApiError {
            status: StatusCode::SERVICE_UNAVAILABLE,
            body: ErrorBody {
                error: "AllEnginesFailed".into(),
                message: msg,
                causes: backend
                    .disabled_engines()
                    .into_iter()
                    .map(|engine| Cause {
                        engine,
                        reason: "disabled".into(),
                    })
                    .collect(),
            },
        },
        GenError::UnknownEngine(_) => ApiError::new(StatusCode::BAD_REQUEST, "UnknownEngine", msg),
        GenError::DuplicateName(_) | GenError::InvalidSpec { .. } | GenError::InvalidRequest(_) => {
            ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", msg)
        }
        GenError::StaleRevision { .. } => ApiError::new(StatusCode::CONFLICT, "StaleRevision", msg),
        _ => ApiError::internal(msg),
    }
}

fn api_error(e: BackendError, backend: &Backend) -> ApiError {
    let msg = e.to_string();
    match &e {
        BackendError::BadRequest(m) => ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", m.clone()),
        BackendError::Catalog(c) => catalog_error(c),
        BackendError::Generator(g) => gen_error(g, backend),
        BackendError::Query(FusionError::Generation(g)) => gen_error(g, backend),
        BackendError::Query(FusionError::InvalidPlan(_)) => {
            ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", msg)
        }
        BackendError::Ingest(IngestError::PathNotFound(_)) => {
            ApiError::new(StatusCode::BAD_REQUEST, "PathNotFound", msg)
        }
        BackendError::Ingest(IngestError::AlreadyRegistered(_)) => {
            ApiError::new(StatusCode::CONFLICT, "AlreadyRegistered", msg)
        }
        BackendError::Ingest(IngestError::Catalog(c)) => catalog_error(c),
        _ => ApiError::internal(msg),
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", e.to_string()))
}

/// Runs `f` on the blocking pool and maps its error.
async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Backend) -> Result<T, BackendError> + Send + 'static,
{
    let backend = Arc::clone(&state.backend);
    tokio::task::spawn_blocking(move || f(&backend).map_err(|e| api_error(e, &backend)))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn health() -> &'static str {
    "ok"
}

async fn version() -> Json<Versions> {
    Json(Versions {
        components: backend_versions(),
    })
}

async fn status(State(state): State<AppState>) -> Result<Response, ApiError> {
    let report = blocking(&state, |b| Ok(b.status())).await?;
    Ok(Json(report).into_response())
}

async fn query(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: QueryRequest = parse_body(&body)?;
    if req.prompt.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", "prompt must not be empty"));
    }
    if req.n == 0 {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", "n must be at least 1"));
    }
    let _permit = state
        .queries
        .acquire()
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let response = blocking(&state, move |b| b.query(&req)).await?;
    Ok(Json(response).into_response())
}

async fn list_directories(State(state): State<AppState>) -> Result<Response, ApiError> {
    let dirs = blocking(&state, |b| b.directories()).await?;
    Ok(Json(dirs).into_response())
}

async fn add_directory(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: AddDirectory = parse_body(&body)?;
    let view = blocking(&state, move |b| b.add_directory(&req.path)).await?;
    Ok((StatusCode::ACCEPTED, Json(view)).into_response())
}

async fn get_directory(State(state): State<AppState>, Path(id): Path<i64>) -> Result<Response, ApiError> {
    let view = blocking(&state, move |b| b.directory(id)).await?;
    Ok(Json(view).into_response())
}

async fn patch_directory(
    State(state): State<AppState>,
    Path(id): Path<i64>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: PatchDirectory = parse_body(&body)?;
    let view = blocking(&state, move |b| b.set_directory_enabled(id, req.enabled)).await?;
    Ok(Json(view).into_response())
}

async fn delete_directory(State(state): State<AppState>, Path(id): Path<i64>) -> Result<Response, ApiError> {
    blocking(&state, move |b| b.remove_directory(id)).await?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn get_generators(State(state): State<AppState>) -> Json<crate::wire::Generators> {
    Json(state.backend.generators())
}

async fn patch_generators(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: PatchGenerators = parse_body(&body)?;
    let view = blocking(&state, move |b| b.patch_generators(&req)).await?;
    Ok(Json(view).into_response())
}

async fn image(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let lookup = id.clone();
    match blocking(&state, move |b| b.image(&lookup)).await? {
        Some(img) => Ok(([(header::CONTENT_TYPE, img.content_type)], img.bytes).into_response()),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, "UnknownImage", format!("no image `{id}`"))),
    }
}

async fn shutdown(State(state): State<AppState>) -> StatusCode {
    let _ = state.stop.send(true);
    StatusCode::ACCEPTED
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Fault {
    /// Service to take down; only `vecstore` is supported.
    stop: String,
}

async fn fault(State(state): State<AppState>, body: Bytes) -> Result<StatusCode, ApiError> {
    if !state.backend.fault_injection() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "NotFound", "fault injection is disabled"));
    }
    let req: Fault = parse_body(&body)?;
    match req.stop.as_str() {
        "vecstore" => {
            let backend = Arc::clone(&state.backend);
            tokio::task::spawn_blocking(move || backend.flush_service().stop())
                .await
                .map_err(|e| ApiError::internal(e.to_string()))?;
            Ok(StatusCode::NO_CONTENT)
        }
        other => Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "BadRequest",
            format!("cannot stop `{other}`"),
        )),
    }
}
