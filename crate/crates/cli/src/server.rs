use std::collections::HashMap;
use std::net::SocketAddr;

use axum::extract::{Path, Query};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pump_core::api::{self, ApiError, Kind};
use serde_json::{json, Value};

pub fn router() -> Router {
    Router::new()
        .route("/api/v1/info", get(|| async { Json(api::info()) }))
        .route("/api/v1/schema", get(|| async { Json(api::schema()) }))
        .route("/api/v1/{kind}", post(handle))
}

fn error_response(e: ApiError) -> Response {
    let status = StatusCode::from_u16(e.status).unwrap_or(StatusCode::BAD_REQUEST);
    (status, Json(e.body)).into_response()
}

/// `?budget_ms=` on a grid request overrides the body's budget; `?seed=`
/// and `?format=` likewise override the control keys.
async fn handle(Path(kind): Path<String>, Query(query): Query<HashMap<String, String>>, body: String) -> Response {
    let Some(kind) = Kind::parse(&kind) else {
        return (StatusCode::NOT_FOUND, Json(json!({"error": {"kind": "not_found", "message": format!("unknown endpoint `{kind}`")}})))
            .into_response();
    };
    let mut body: Value = match serde_json::from_str(&body) {
        Ok(v) => v,
        Err(e) => return error_response(api::malformed(&e)),
    };
    if let Some(obj) = body.as_object_mut() {
        for (k, v) in &query {
            let allowed = matches!(k.as_str(), "seed" | "format") || (k == "budget_ms" && kind == Kind::Grid);
            if !allowed {
                continue;
            }
            let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.clone()));
            obj.insert(k.clone(), value);
        }
    }
    let result = tokio::task::spawn_blocking(move || api::run(kind, &body)).await;
    match result {
        Ok(Ok(resp)) => ([(header::CONTENT_TYPE, resp.content_type())], resp.render()).into_response(),
        Ok(Err(e)) => error_response(e),
        Err(join) => (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({"error": {"kind": "internal", "message": join.to_string()}})))
            .into_response(),
    }
}

pub async fn serve(addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("pump listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router()).await
}

pub fn serve_blocking(addr: SocketAddr) -> i32 {
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("cannot start runtime: {e}");
            return 2;
        }
    };
    match rt.block_on(serve(addr)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("server error: {e}");
            2
        }
    }
}
