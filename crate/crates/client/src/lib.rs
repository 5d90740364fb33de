//! Typed HTTP client for the sketch reasoning service.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sketch_core::api::*;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("server returned {status}: {error}")]
    Api { status: u16, error: ApiError },
    #[error("server returned {status} with an unreadable body: {body}")]
    Unexpected { status: u16, body: String },
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
}

#[derive(Debug, Clone)]
pub struct SketchClient {
    base: String,
    http: reqwest::Client,
}

impl SketchClient {
    /// `base_url` like `http://127.0.0.1:8080`. Requests have no timeout
    /// because a search can run for a long time.
    pub fn new(base_url: impl Into<String>) -> Self {
        SketchClient { base: base_url.into().trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    pub fn with_timeout(base_url: impl Into<String>, timeout: Duration) -> Result<Self, ClientError> {
        let http = reqwest::Client::builder().timeout(timeout).build()?;
        Ok(SketchClient { base: base_url.into().trim_end_matches('/').to_string(), http })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        let body = resp.bytes().await?;
        if status.is_success() {
            return serde_json::from_slice(&body).map_err(|e| ClientError::Unexpected {
                status: status.as_u16(),
                body: format!("{e}: {}", String::from_utf8_lossy(&body)),
            });
        }
        match serde_json::from_slice::<ApiError>(&body) {
            Ok(error) => Err(ClientError::Api { status: status.as_u16(), error }),
            Err(_) => Err(ClientError::Unexpected { status: status.as_u16(), body: String::from_utf8_lossy(&body).into() }),
        }
    }

    async fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, ClientError> {
        let resp = self.http.post(format!("{}{path}", self.base)).json(body).send().await?;
        Self::decode(resp).await
    }

    pub async fn health(&self) -> Result<HealthResponse, ClientError> {
        let resp = self.http.get(format!("{}/health", self.base)).send().await?;
        Self::decode(resp).await
    }

    pub async fn parse(&self, req: &ParseRequest) -> Result<ParseResponse, ClientError> {
        self.post("/v1/parse", req).await
    }

    pub async fn render(&self, req: &RenderRequest) -> Result<RenderResponse, ClientError> {
        self.post("/v1/render", req).await
    }

    pub async fn run(&self, req: &RunRequest) -> Result<RunResponse, ClientError> {
        self.post("/v1/sessions", req).await
    }

    pub async fn search(&self, req: &SearchRequest) -> Result<SearchResponse, ClientError> {
        self.post("/v1/search", req).await
    }

    pub async fn mine(&self, req: &MineRequest) -> Result<MineResponse, ClientError> {
        self.post("/v1/mine", req).await
    }

    pub async fn segment(&self, req: &SegmentRequest) -> Result<SynthesisResponse, ClientError> {
        self.post("/v1/segment", req).await
    }

    pub async fn reflect(&self, req: &ReflectRequest) -> Result<SynthesisResponse, ClientError> {
        self.post("/v1/reflect", req).await
    }

    pub async fn mix(&self, req: &MixRequest) -> Result<MixResponse, ClientError> {
        self.post("/v1/mix", req).await
    }

    pub async fn eval(&self, req: &EvalRequest) -> Result<EvalResponse, ClientError> {
        self.post("/v1/eval", req).await
    }
}
