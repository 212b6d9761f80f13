//! HTTP annotation API.
//!
//! - `GET /api/queries/next`: oldest unlabelled query, or 204
//! - `POST /api/labels` with `{query_id, label}`: 200, 404 unknown id, 409 repeat
//! - `GET /api/status`

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::service::{AnnotationService, LabelError};
use crate::envs::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub query_id: u64,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelAccepted {
    pub query_id: u64,
    pub label: Label,
    pub y: [f64; 2],
}

pub fn router(service: Arc<AnnotationService>) -> Router {
    Router::new()
        .route("/api/queries/next", get(next_query))
        .route("/api/labels", post(submit_label))
        .route("/api/status", get(status))
        .with_state(service)
}

async fn next_query(State(service): State<Arc<AnnotationService>>) -> Response {
    match service.next_query() {
        Some(view) => Json(view).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn submit_label(State(service): State<Arc<AnnotationService>>, Json(req): Json<LabelRequest>) -> Response {
    match service.label(req.query_id, req.label) {
        Ok(_) => Json(LabelAccepted {
            query_id: req.query_id,
            label: req.label,
            y: req.label.y(),
        })
        .into_response(),
        Err(LabelError::UnknownQuery) => (StatusCode::NOT_FOUND, "unknown query id").into_response(),
        Err(LabelError::AlreadyLabeled) => (StatusCode::CONFLICT, "query already labelled").into_response(),
    }
}

async fn status(State(service): State<Arc<AnnotationService>>) -> Response {
    Json(service.status()).into_response()
}

/// Serves the API on `addr` until the process stops.
pub async fn serve(service: Arc<AnnotationService>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "annotation api listening");
    axum::serve(listener, router(service)).await
}
