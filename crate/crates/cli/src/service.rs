//! HTTP service over an [`Engine`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use crossview::geometry::{BoxSequence, ContextGrid, PathKind};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::engine::{Engine, Method, TransformRequest};
use crate::error::ApiError;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

/// One row of `GET /scenes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub id: String,
    #[serde(rename = "T")]
    pub frames: usize,
    pub path_kind: PathKind,
    pub path_magnitude: f64,
    /// First-frame context grid, usable as a thumbnail.
    pub context0: ContextGrid,
    pub b_ref: BoxSequence,
}

#[derive(Debug, Deserialize)]
struct SceneQuery {
    #[serde(default)]
    tracks: Option<String>,
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/scenes", get(scenes))
        .route("/scenes/{id}", get(scene))
        .route("/transform", post(transform))
        .with_state(engine)
}

async fn health() -> Json<Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn scenes(State(engine): State<Arc<Engine>>) -> Json<Vec<SceneSummary>> {
    Json(
        engine
            .records()
            .map(|r| SceneSummary {
                id: r.id.clone(),
                frames: r.frames,
                path_kind: r.path_kind,
                path_magnitude: r.path_magnitude,
                context0: r.context0.clone(),
                b_ref: r.b_ref.clone(),
            })
            .collect(),
    )
}

async fn scene(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    Query(q): Query<SceneQuery>,
) -> Result<Json<Value>, ApiError> {
    let record = engine
        .record(&id)
        .ok_or_else(|| ApiError::not_found("unknown_record", format!("no record `{id}`")))?;
    let mut v = serde_json::to_value(record).map_err(ApiError::internal)?;
    let with_tracks = matches!(q.tracks.as_deref(), Some("1" | "true"));
    if !with_tracks {
        if let Value::Object(map) = &mut v {
            map.remove("dct_tokens");
        }
    }
    Ok(Json(v))
}

/// Parses a request body, naming unknown methods and directions explicitly.
pub fn parse_request(body: &[u8]) -> Result<TransformRequest, ApiError> {
    let v: Value =
        serde_json::from_slice(body).map_err(|e| ApiError::bad_request("invalid_json", e.to_string()))?;
    if !v.is_object() {
        return Err(ApiError::bad_request("invalid_json", "request body must be a JSON object"));
    }
    match v.get("method") {
        None => return Err(ApiError::bad_request("missing_method", "method is required")),
        Some(Value::String(s)) => {
            s.parse::<Method>().map_err(|e| ApiError::bad_request("unknown_method", e))?;
        }
        Some(_) => return Err(ApiError::bad_request("unknown_method", "method must be a string")),
    }
    if let Some(d) = v.get("direction") {
        let ok = d.as_str().is_some_and(|s| s.parse::<crossview::dit::Direction>().is_ok());
        if !ok {
            return Err(ApiError::bad_request("unknown_direction", "direction must be f2v or v2f"));
        }
    }
    if let Some(Value::Array(keys)) = v.get("keyframes") {
        for (i, k) in keys.iter().enumerate() {
            let good = k.get("box").and_then(Value::as_array).is_some_and(|b| {
                let nums: Vec<f64> = b.iter().filter_map(Value::as_f64).collect();
                nums.len() == 4 && b.len() == 4 && nums[2] >= 0.0 && nums[3] >= 0.0
            });
            if !good {
                return Err(ApiError::bad_request(
                    "invalid_box",
                    format!("keyframe {i}: box must be [cx, cy, w, h] with w, h >= 0"),
                ));
            }
        }
    }
    serde_json::from_value(v).map_err(|e| ApiError::bad_request("invalid_request", e.to_string()))
}

async fn transform(State(engine): State<Arc<Engine>>, body: Bytes) -> Response {
    let req = match parse_request(&body) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    // sampling is CPU-bound; keep it off the async workers
    let result = tokio::task::spawn_blocking(move || engine.transform(&req)).await;
    match result {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => ApiError::internal(e).into_response(),
    }
}

/// Serves until interrupted.
pub async fn serve(engine: Arc<Engine>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
