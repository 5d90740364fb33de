//! HTTP/JSON service exposing parsing, rendering, draw-feedback sessions,
//! tree search, record synthesis and evaluation.

mod ops;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, FromRequest, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sketch_core::api::{ApiError, HealthResponse};
use sketch_core::judge::JudgeSpec;
use sketch_core::model::ModelSpec;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

pub use ops::*;

/// Defaults applied when a request does not name its own model or judge.
#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    pub model: Option<ModelSpec>,
    pub judge: JudgeSpec,
}

#[derive(Clone)]
pub struct AppState {
    pub config: Arc<ServerConfig>,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Self {
        AppState { config: Arc::new(config) }
    }
}

/// Error response carrying an [`ApiError`] body.
#[derive(Debug)]
pub struct AppError(pub ApiError);

impl From<ApiError> for AppError {
    fn from(e: ApiError) -> Self {
        AppError(e)
    }
}

pub fn status_for(kind: &str) -> StatusCode {
    match kind {
        "bad-request" | "no-model" => StatusCode::BAD_REQUEST,
        "parse" | "render" | "synthesis" | "insufficient-records" => StatusCode::UNPROCESSABLE_ENTITY,
        "model" => StatusCode::BAD_GATEWAY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        (status_for(&self.0.kind), Json(self.0)).into_response()
    }
}

/// JSON body extractor whose rejection is an [`ApiError`].
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = AppError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(rej) => Err(AppError(ApiError::bad_request(rej.body_text()))),
        }
    }
}

type Reply<T> = Result<Json<T>, AppError>;

fn reply<T: Serialize>(r: Result<T, ApiError>) -> Reply<T> {
    r.map(Json).map_err(AppError)
}

async fn health() -> Json<HealthResponse> {
    Json(HealthResponse { status: "ok".into(), version: env!("CARGO_PKG_VERSION").into() })
}

macro_rules! handler {
    ($name:ident, $op:path, $req:ty, $resp:ty) => {
        async fn $name(State(s): State<AppState>, ApiJson(req): ApiJson<$req>) -> Reply<$resp> {
            reply($op(&s.config, req).await)
        }
    };
}

handler!(parse_h, ops::parse, sketch_core::api::ParseRequest, sketch_core::api::ParseResponse);
handler!(render_h, ops::render, sketch_core::api::RenderRequest, sketch_core::api::RenderResponse);
handler!(run_h, ops::run, sketch_core::api::RunRequest, sketch_core::api::RunResponse);
handler!(search_h, ops::search, sketch_core::api::SearchRequest, sketch_core::api::SearchResponse);
handler!(mine_h, ops::mine, sketch_core::api::MineRequest, sketch_core::api::MineResponse);
handler!(segment_h, ops::segment, sketch_core::api::SegmentRequest, sketch_core::api::SynthesisResponse);
handler!(reflect_h, ops::reflect, sketch_core::api::ReflectRequest, sketch_core::api::SynthesisResponse);
handler!(mix_h, ops::mix, sketch_core::api::MixRequest, sketch_core::api::MixResponse);
handler!(eval_h, ops::eval, sketch_core::api::EvalRequest, sketch_core::api::EvalResponse);

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/parse", post(parse_h))
        .route("/v1/render", post(render_h))
        .route("/v1/sessions", post(run_h))
        .route("/v1/search", post(search_h))
        .route("/v1/mine", post(mine_h))
        .route("/v1/segment", post(segment_h))
        .route("/v1/reflect", post(reflect_h))
        .route("/v1/mix", post(mix_h))
        .route("/v1/eval", post(eval_h))
        .layer(DefaultBodyLimit::max(512 * 1024 * 1024))
        .with_state(state)
}

/// Serves until the process exits.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}

/// Binds an ephemeral local port and serves in the background.
pub async fn spawn_local(state: AppState) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(("127.0.0.1", 0)).await?;
    let addr = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router(state)).await {
            tracing::error!(error = %e, "local server stopped");
        }
    });
    Ok((addr, handle))
}
