//! HTTP API over a [`StudyStore`], plus optional static files for the
//! rater front-end.
//!
//! | route | success | failures |
//! |---|---|---|
//! | `GET /api/next?rater=ID` | 200 pair view, 204 when done | 404 unknown rater |
//! | `GET /api/progress?rater=ID` | 200 `{rated, assigned}` | 404 unknown rater |
//! | `POST /api/rating` | 201 stored record | 422 range or assignment violation |
//! | `GET /api/agreement` | 200 agreement report | |
//! | `GET /api/adjudication?senior=ID` | 200 queue | 403 not a senior |
//! | `POST /api/adjudication` | 201 senior record | 403 not a senior, 422 invalid |
//! | `GET /api/rubric` | 200 rubric text | |
//!
//! Error bodies are `{"error": message, "field": name-or-null}`.

use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sotana_core::study::{AdjudicationSubmission, RatingSubmission, StudyError, RUBRIC, RUBRIC_VERSION};

use crate::study_store::{StoreError, StudyStore};

pub struct AppState {
    store: RwLock<StudyStore>,
    threshold: u8,
}

pub type Shared = Arc<AppState>;

pub fn state(store: StudyStore, threshold: u8) -> Shared {
    Arc::new(AppState { store: RwLock::new(store), threshold })
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    pub error: String,
    pub field: Option<&'static str>,
    #[serde(skip)]
    status: StatusCode,
}

impl ApiError {
    fn new(status: StatusCode, error: impl ToString, field: Option<&'static str>) -> Self {
        Self { error: error.to_string(), field, status }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        let (status, field) = match &e {
            StudyError::ScoreOutOfRange { field, .. } => (StatusCode::UNPROCESSABLE_ENTITY, Some(*field)),
            StudyError::UnknownPair(_) => (StatusCode::UNPROCESSABLE_ENTITY, Some("pair_id")),
            StudyError::NotAssigned { .. } | StudyError::UnknownRater(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, Some("rater_id"))
            }
            StudyError::NotQueued { .. } => (StatusCode::UNPROCESSABLE_ENTITY, Some("pair_id")),
            StudyError::NotSenior(_) => (StatusCode::FORBIDDEN, Some("senior_id")),
            _ => (StatusCode::UNPROCESSABLE_ENTITY, None),
        };
        ApiError::new(status, e, field)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Study(s) => s.into(),
            other => {
                log::error!("store failure: {other}");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage failure; the write was not applied", None)
            }
        }
    }
}

fn bad_body(e: JsonRejection) -> ApiError {
    ApiError::new(e.status(), e.body_text(), None)
}

fn poisoned<T>(_: T) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "study state lock poisoned", None)
}

#[derive(Deserialize)]
struct RaterQuery {
    rater: String,
}

#[derive(Deserialize)]
struct SeniorQuery {
    senior: String,
}

pub fn router(state: Shared, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/next", get(next))
        .route("/api/progress", get(progress))
        .route("/api/rating", axum::routing::post(rating))
        .route("/api/agreement", get(agreement))
        .route("/api/adjudication", get(queue).post(adjudicate))
        .route("/api/rubric", get(rubric))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback(move |uri: axum::http::Uri| serve_static(dir.clone(), uri.path().to_string())),
        None => api,
    }
}

fn unknown_rater(e: StudyError) -> ApiError {
    match e {
        StudyError::UnknownRater(_) => ApiError::new(StatusCode::NOT_FOUND, e, Some("rater")),
        other => other.into(),
    }
}

async fn next(State(s): State<Shared>, Query(q): Query<RaterQuery>) -> Result<Response, ApiError> {
    let store = s.store.read().map_err(poisoned)?;
    match store.study().next_for(&q.rater).map_err(unknown_rater)? {
        Some(view) => Ok(Json(view).into_response()),
        None => Ok(StatusCode::NO_CONTENT.into_response()),
    }
}

async fn progress(State(s): State<Shared>, Query(q): Query<RaterQuery>) -> Result<Response, ApiError> {
    let store = s.store.read().map_err(poisoned)?;
    Ok(Json(store.study().progress(&q.rater).map_err(unknown_rater)?).into_response())
}

async fn rating(
    State(s): State<Shared>,
    body: Result<Json<RatingSubmission>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(sub) = body.map_err(bad_body)?;
    let record = tokio::task::spawn_blocking(move || s.store.write().map_err(poisoned)?.record_rating(&sub).map_err(ApiError::from))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e, None))??;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn agreement(State(s): State<Shared>) -> Result<Response, ApiError> {
    let store = s.store.read().map_err(poisoned)?;
    Ok(Json(store.study().agreement()).into_response())
}

async fn queue(State(s): State<Shared>, Query(q): Query<SeniorQuery>) -> Result<Response, ApiError> {
    let store = s.store.read().map_err(poisoned)?;
    if !store.study().is_senior(&q.senior) {
        return Err(StudyError::NotSenior(q.senior).into());
    }
    Ok(Json(store.study().adjudication_queue(s.threshold)).into_response())
}

async fn adjudicate(
    State(s): State<Shared>,
    body: Result<Json<AdjudicationSubmission>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(sub) = body.map_err(bad_body)?;
    let adj = tokio::task::spawn_blocking(move || {
        let threshold = s.threshold;
        s.store.write().map_err(poisoned)?.adjudicate(&sub, threshold).map_err(ApiError::from)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e, None))??;
    Ok((StatusCode::CREATED, Json(adj)).into_response())
}

#[derive(Serialize)]
struct Aspect {
    name: &'static str,
    levels: [&'static str; 4],
}

#[derive(Serialize)]
struct Rubric {
    rubric_version: &'static str,
    aspects: Vec<Aspect>,
}

async fn rubric() -> Json<Rubric> {
    Json(Rubric {
        rubric_version: RUBRIC_VERSION,
        aspects: RUBRIC.iter().map(|(name, levels)| Aspect { name, levels: *levels }).collect(),
    })
}

async fn serve_static(dir: PathBuf, path: String) -> Response {
    let rel = Path::new(path.trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return StatusCode::NOT_FOUND.into_response();
    }
    let mut file = dir.join(rel);
    if path.ends_with('/') || rel.as_os_str().is_empty() {
        file = file.join("index.html");
    }
    let mime = match file.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    };
    match tokio::fs::read(&file).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, mime)], bytes).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

/// Serves until Ctrl-C.
pub async fn serve(state: Shared, addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("study server listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
