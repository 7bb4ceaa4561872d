//! Optional JSON-over-HTTP facade for the client API.

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use flexsmc_core::session::{Catalog, ClientCall, ClientQuery, ClientReply, ErrorBody, ErrorCode};
use serde_json::{json, Value};

use super::Inner;

pub(crate) fn router(inner: Arc<Inner>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/catalog", get(catalog))
        .route("/v1/query", post(query))
        .with_state(inner)
}

pub(crate) async fn serve_http(inner: Arc<Inner>, listener: tokio::net::TcpListener) {
    let _ = axum::serve(listener, router(inner)).await;
}

async fn health(State(inner): State<Arc<Inner>>) -> Json<Value> {
    Json(json!({"status": "ok", "fingerprint": inner.fingerprint()}))
}

async fn catalog(State(inner): State<Arc<Inner>>) -> Json<Catalog> {
    Json(inner.catalog())
}

fn status_of(code: ErrorCode) -> StatusCode {
    match code {
        ErrorCode::UnknownGroup => StatusCode::NOT_FOUND,
        ErrorCode::GroupTooSmall => StatusCode::CONFLICT,
        ErrorCode::UnsupportedOperation | ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
        ErrorCode::SessionFailed => StatusCode::SERVICE_UNAVAILABLE,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

async fn query(State(inner): State<Arc<Inner>>, Json(q): Json<ClientQuery>) -> (StatusCode, Json<Value>) {
    let reply: Result<ClientReply, ErrorBody> = inner.call(ClientCall::Query(q), None).await;
    match reply {
        Ok(r) => (StatusCode::OK, Json(serde_json::to_value(r).expect("replies serialize"))),
        Err(e) => (status_of(e.code), Json(serde_json::to_value(e).expect("errors serialize"))),
    }
}
