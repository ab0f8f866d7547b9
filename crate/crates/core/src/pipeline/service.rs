// SPDX-License-Identifier: Apache-2.0

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::info;
use serde::Deserialize;
use serde_json::json;

use super::{PipelineError, System};

#[derive(Debug, Deserialize)]
struct AskRequest {
    question: String,
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

async fn ask(State(system): State<System>, Json(req): Json<AskRequest>) -> Response {
    let outcome = tokio::task::spawn_blocking(move || system.ask(&req.question)).await;
    match outcome {
        Ok(Ok(r)) => Json(r).into_response(),
        Ok(Err(PipelineError::EmptyQuestion)) => (
            StatusCode::BAD_REQUEST,
            Json(json!({"error": "question is empty"})),
        )
            .into_response(),
        Ok(Err(e)) => (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(json!({"error": e.to_string()})),
        )
            .into_response(),
        Err(e) => (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(json!({"error": e.to_string()})),
        )
            .into_response(),
    }
}

/// `POST /ask` and `GET /health`.
pub fn router(system: System) -> Router {
    Router::new()
        .route("/ask", post(ask))
        .route("/health", get(health))
        .with_state(system)
}

/// Serve until the process is stopped.
pub async fn serve(system: System, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(system)).await
}
