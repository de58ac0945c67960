//! Local HTTP API over a [`CurationStore`].
//!
//! Writes are serialised through the store's write lock; reads share it.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{CurationError, CurationStore, Decision, ReviewDecision, SelectionManifest};
use crate::genclient::{CandidateImage, RejectReason};
use crate::manifest::FstGroup;

pub const DEFAULT_ADDR: &str = "127.0.0.1:7341";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Where exported selection files are written.
    pub selection_dir: PathBuf,
    /// Root that candidate `payload_uri`s are relative to.
    pub payload_root: PathBuf,
    /// Static assets of the review UI, served at `/` when present.
    pub ui_dir: Option<PathBuf>,
}

#[derive(Clone)]
struct AppState {
    store: Arc<RwLock<CurationStore>>,
    config: Arc<ServiceConfig>,
}

struct ApiError(CurationError);

impl From<CurationError> for ApiError {
    fn from(e: CurationError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self.0 {
            CurationError::UnknownCandidate(_) | CurationError::UnknownSeed(_) | CurationError::UnknownRequest(_) => {
                (StatusCode::NOT_FOUND, "not_found")
            }
            CurationError::QuotaExceeded { .. } => (StatusCode::CONFLICT, "quota_exceeded"),
            CurationError::ManifestFinalized { .. } => (StatusCode::CONFLICT, "manifest_finalized"),
            CurationError::MissingReason(_) => (StatusCode::UNPROCESSABLE_ENTITY, "missing_reason"),
            CurationError::IncompleteSelection(_) => (StatusCode::UNPROCESSABLE_ENTITY, "incomplete_selection"),
            CurationError::NoSeeds { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "no_seeds"),
            CurationError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let mut body = json!({ "error": kind, "message": self.0.to_string() });
        if let CurationError::IncompleteSelection(seeds) = &self.0 {
            body["seeds"] = json!(seeds);
        }
        (status, Json(body)).into_response()
    }
}

fn bad_request(message: impl Into<String>) -> Response {
    (
        StatusCode::UNPROCESSABLE_ENTITY,
        Json(json!({ "error": "invalid_request", "message": message.into() })),
    )
        .into_response()
}

#[derive(Debug, Deserialize)]
struct SeedQuery {
    condition: Option<String>,
    group: Option<String>,
}

#[derive(Debug, Deserialize)]
struct CandidateQuery {
    seed_id: String,
}

#[derive(Debug, Serialize)]
struct CandidateView {
    #[serde(flatten)]
    candidate: CandidateImage,
    image_url: String,
}

#[derive(Debug, Deserialize)]
struct ReviewBody {
    candidate_id: String,
    decision: Decision,
    reason: Option<RejectReason>,
    reviewer: String,
}

#[derive(Debug, Deserialize)]
struct ExportBody {
    condition: String,
    group: String,
}

#[derive(Debug, Serialize)]
struct ExportResponse {
    path: String,
    manifest: SelectionManifest,
}

fn parse_group(raw: &str) -> Result<FstGroup, Response> {
    raw.parse().map_err(|_| bad_request(format!("unknown group `{raw}`")))
}

async fn list_seeds(State(app): State<AppState>, Query(q): Query<SeedQuery>) -> Response {
    let group = match q.group.as_deref().filter(|g| !g.is_empty()).map(parse_group).transpose() {
        Ok(g) => g,
        Err(resp) => return resp,
    };
    let store = app.store.read().expect("store lock");
    let condition = q.condition.as_deref().filter(|c| !c.is_empty());
    Json(store.state().seed_summaries(condition, group)).into_response()
}

async fn list_candidates(State(app): State<AppState>, Query(q): Query<CandidateQuery>) -> Result<Response, ApiError> {
    let store = app.store.read().expect("store lock");
    if !store.state().seeds.contains_key(&q.seed_id) {
        return Err(CurationError::UnknownSeed(q.seed_id).into());
    }
    let views: Vec<CandidateView> = store
        .state()
        .candidates_for(&q.seed_id)
        .into_iter()
        .map(|c| CandidateView {
            image_url: format!("/img/{}", c.candidate_id),
            candidate: c.clone(),
        })
        .collect();
    Ok(Json(views).into_response())
}

async fn candidate_image(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let uri = {
        let store = app.store.read().expect("store lock");
        store
            .state()
            .candidates
            .get(&id)
            .map(|c| c.payload_uri.clone())
            .ok_or_else(|| CurationError::UnknownCandidate(id.clone()))?
    };
    let bytes = tokio::fs::read(app.config.payload_root.join(uri))
        .await
        .map_err(CurationError::Io)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn review(State(app): State<AppState>, Json(body): Json<ReviewBody>) -> Result<Response, ApiError> {
    let mut store = app.store.write().expect("store lock");
    let decision = ReviewDecision {
        candidate_id: body.candidate_id,
        decision: body.decision,
        reason: body.reason,
        reviewer: body.reviewer,
        decided_at: store.now(),
    };
    let updated = store.record_review(decision)?;
    Ok(Json(updated).into_response())
}

async fn export(State(app): State<AppState>, Json(body): Json<ExportBody>) -> Result<Response, ApiError> {
    let group = match parse_group(&body.group) {
        Ok(g) => g,
        Err(resp) => return Ok(resp),
    };
    let mut store = app.store.write().expect("store lock");
    let manifest = store.export_selection(&body.condition, group)?;
    let path = manifest.write(&app.config.selection_dir)?;
    Ok(Json(ExportResponse {
        path: path.display().to_string(),
        manifest,
    })
    .into_response())
}

async fn ui_file(State(app): State<AppState>, path: Option<UrlPath<String>>) -> Response {
    let Some(dir) = &app.config.ui_dir else {
        return (StatusCode::NOT_FOUND, "review UI not configured").into_response();
    };
    let rel = path.map(|UrlPath(p)| p).unwrap_or_else(|| "index.html".into());
    if rel.split('/').any(|seg| seg == ".." || seg.is_empty()) {
        return StatusCode::NOT_FOUND.into_response();
    }
    match tokio::fs::read(dir.join(&rel)).await {
        Ok(bytes) => {
            let mime = match rel.rsplit('.').next() {
                Some("html") => "text/html; charset=utf-8",
                Some("js") => "text/javascript",
                Some("css") => "text/css",
                Some("png") => "image/png",
                Some("svg") => "image/svg+xml",
                _ => "application/octet-stream",
            };
            ([(header::CONTENT_TYPE, mime)], bytes).into_response()
        }
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

pub fn router(store: Arc<RwLock<CurationStore>>, config: ServiceConfig) -> Router {
    let state = AppState {
        store,
        config: Arc::new(config),
    };
    Router::new()
        .route("/api/seeds", get(list_seeds))
        .route("/api/candidates", get(list_candidates))
        .route("/img/{candidate_id}", get(candidate_image))
        .route("/api/review", post(review))
        .route("/api/export", post(export))
        .route("/", get(ui_file))
        .route("/{*path}", get(ui_file))
        .with_state(state)
}

/// Serve until the process is stopped.
pub async fn serve(addr: SocketAddr, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("curation service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await
}
