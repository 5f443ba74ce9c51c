//! HTTP front end for snippet search.

use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use qfcomp::service::{search, Engines, InvertedIndex, ServiceError};
use serde::Deserialize;
use serde_json::json;

pub const DEFAULT_BUDGET: usize = 75;
pub const DEFAULT_K: usize = 3;

pub struct AppState {
    pub index: InvertedIndex,
    pub engines: Engines,
    pub default_engine: String,
}

#[derive(Debug, Deserialize)]
pub struct SearchParams {
    q: String,
    b: Option<usize>,
    k: Option<usize>,
    engine: Option<String>,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match e {
            ServiceError::UnknownEngine(_) | ServiceError::BadParameter(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

async fn search_handler(
    State(state): State<Arc<AppState>>,
    Query(p): Query<SearchParams>,
) -> Result<impl IntoResponse, ApiError> {
    let name = p.engine.unwrap_or_else(|| state.default_engine.clone());
    let b = p.b.unwrap_or(DEFAULT_BUDGET);
    let k = p.k.unwrap_or(DEFAULT_K);
    // compression is CPU-bound; keep it off the async workers
    let resp = tokio::task::spawn_blocking(move || {
        let engine = state.engines.get(&name)?;
        search(&state.index, &p.q, b, k, engine)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(resp))
}

async fn engines_handler(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    Json(json!({ "engines": state.engines.names() }))
}

async fn healthz() -> impl IntoResponse {
    Json(json!({ "status": "ok" }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/search", get(search_handler))
        .route("/engines", get(engines_handler))
        .route("/healthz", get(healthz))
        .with_state(state)
}
