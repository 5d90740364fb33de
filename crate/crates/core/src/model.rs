//! Chat-with-images model access: a remote chat-completions adapter and a
//! deterministic scripted double.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

/// An image carried by a message: a file path, optionally with its PNG bytes
/// already in memory. Only the path is serialized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: String,
    #[serde(skip)]
    pub data: Option<Arc<Vec<u8>>>,
}

impl PartialEq for ImageRef {
    fn eq(&self, other: &Self) -> bool {
        self.path == other.path
    }
}

impl ImageRef {
    pub fn file(path: impl Into<String>) -> Self {
        ImageRef { path: path.into(), data: None }
    }

    pub fn inline(path: impl Into<String>, png: Vec<u8>) -> Self {
        ImageRef { path: path.into(), data: Some(Arc::new(png)) }
    }

    /// PNG bytes, read from disk when not held in memory.
    pub fn bytes(&self) -> Result<Arc<Vec<u8>>, ModelError> {
        match &self.data {
            Some(d) => Ok(d.clone()),
            None => std::fs::read(PathBuf::from(&self.path))
                .map(Arc::new)
                .map_err(|e| ModelError::InvalidRequest(format!("image {}: {e}", self.path))),
        }
    }

    pub fn data_url(&self) -> Result<String, ModelError> {
        let b64 = base64::engine::general_purpose::STANDARD.encode(self.bytes()?.as_slice());
        Ok(format!("data:image/png;base64,{b64}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Part {
    Text { text: String },
    Image { image: ImageRef },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<Part>,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Message { role: Role::System, parts: vec![Part::Text { text: text.into() }] }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Message { role: Role::User, parts: vec![Part::Text { text: text.into() }] }
    }

    pub fn user_with_image(text: impl Into<String>, image: ImageRef) -> Self {
        Message {
            role: Role::User,
            parts: vec![Part::Text { text: text.into() }, Part::Image { image }],
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Message { role: Role::Assistant, parts: vec![Part::Text { text: text.into() }] }
    }

    /// Concatenated text parts.
    pub fn text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Text { text } => Some(text.as_str()),
                Part::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("")
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageRef> {
        self.parts.iter().filter_map(|p| match p {
            Part::Image { image } => Some(image),
            Part::Text { .. } => None,
        })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.parts.is_empty() {
            return Err(ModelError::InvalidRequest("message has no parts".into()));
        }
        if self.role == Role::Assistant && self.images().next().is_some() {
            return Err(ModelError::InvalidRequest("assistant messages carry text only".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "kebab-case")]
pub enum ModelError {
    #[error("network error after {attempts} attempt(s): {message}")]
    Network { message: String, attempts: u32 },
    #[error("authentication rejected (HTTP {status}): {message}")]
    Auth { status: u16, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no scripted response for key {key} ({band:?} band)")]
    MissingFixture { key: String, band: TemperatureBand },
}

impl ModelError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ModelError::Network { .. }) || matches!(self, ModelError::Http { status, .. } if *status >= 500 || *status == 429)
    }
}

/// A model that continues a multimodal transcript.
#[async_trait]
pub trait ChatModel: Send + Sync {
    /// Returns `n` assistant replies sampled at `temperature`.
    async fn complete(&self, messages: &[Message], temperature: f64, n: usize) -> Result<Vec<String>, ModelError>;
}

fn check_request(messages: &[Message], temperature: f64, n: usize) -> Result<(), ModelError> {
    if n == 0 {
        return Err(ModelError::InvalidRequest("n must be at least 1".into()));
    }
    if !temperature.is_finite() {
        return Err(ModelError::InvalidRequest("temperature must be finite".into()));
    }
    if messages.is_empty() {
        return Err(ModelError::InvalidRequest("empty transcript".into()));
    }
    for (i, m) in messages.iter().enumerate() {
        m.validate()?;
        if m.role == Role::System && i != 0 {
            return Err(ModelError::InvalidRequest("system message must come first".into()));
        }
        if i > 0 && m.role == Role::Assistant && messages[i - 1].role == Role::Assistant {
            return Err(ModelError::InvalidRequest("consecutive assistant turns".into()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub timeout_secs: f64,
    pub retry_count: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            endpoint_url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model_name: "chart-sketcher".into(),
            api_key_env: Some("SKETCH_API_KEY".into()),
            temperature: 0.4,
            max_tokens: None,
            timeout_secs: 120.0,
            retry_count: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.temperature.is_finite() && (0.0..=2.0).contains(&self.temperature)) {
            return Err(ModelError::InvalidRequest("temperature must lie in [0, 2]".into()));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(ModelError::InvalidRequest("timeout must be positive".into()));
        }
        Ok(())
    }
}

/// Builds the chat-completions request body. The transcript is only read.
pub fn request_body(model: &str, messages: &[Message], temperature: f64, n: usize, max_tokens: Option<u32>) -> Result<Value, ModelError> {
    let mut wire = Vec::with_capacity(messages.len());
    for m in messages {
        let mut content = Vec::with_capacity(m.parts.len());
        for part in &m.parts {
            content.push(match part {
                Part::Text { text } => json!({"type": "text", "text": text}),
                Part::Image { image } => json!({"type": "image_url", "image_url": {"url": image.data_url()?}}),
            });
        }
        wire.push(json!({"role": m.role.as_str(), "content": content}));
    }
    let mut body = json!({
        "model": model,
        "temperature": temperature,
        "n": n,
        "messages": wire,
    });
    if let Some(mt) = max_tokens {
        body["max_tokens"] = json!(mt);
    }
    Ok(body)
}

/// Extracts `choices[i].message.content` from a chat-completions response.
pub fn parse_choices(body: &Value) -> Result<Vec<String>, ModelError> {
    let choices = body
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| ModelError::Malformed("missing `choices` array".into()))?;
    let mut out = Vec::with_capacity(choices.len());
    for (i, c) in choices.iter().enumerate() {
        let content = c
            .pointer("/message/content")
            .ok_or_else(|| ModelError::Malformed(format!("choice {i} has no message.content")))?;
        let text = match content {
            Value::String(s) => s.clone(),
            Value::Array(parts) => parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
            _ => return Err(ModelError::Malformed(format!("choice {i} content is not text"))),
        };
        if text.trim().is_empty() {
            return Err(ModelError::Malformed(format!("choice {i} is empty")));
        }
        out.push(text);
    }
    if out.is_empty() {
        return Err(ModelError::Malformed("no choices returned".into()));
    }
    Ok(out)
}

/// Chat-completions endpoint over HTTP.
pub struct RemoteModel {
    config: ModelConfig,
    http: reqwest::Client,
}

impl RemoteModel {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| ModelError::InvalidRequest(e.to_string()))?;
        Ok(RemoteModel { config, http })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    async fn send_once(&self, body: &Value) -> Result<Vec<String>, ModelError> {
        let mut req = self.http.post(&self.config.endpoint_url).json(body);
        if let Some(var) = &self.config.api_key_env {
            if let Ok(key) = std::env::var(var) {
                req = req.bearer_auth(key);
            }
        }
        let resp = req.send().await.map_err(|e| ModelError::Network { message: e.to_string(), attempts: 1 })?;
        let status = resp.status().as_u16();
        let text = resp.text().await.map_err(|e| ModelError::Network { message: e.to_string(), attempts: 1 })?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(ModelError::Auth { status, message: text }),
            _ => return Err(ModelError::Http { status, body: text }),
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| ModelError::Malformed(e.to_string()))?;
        parse_choices(&value)
    }

    async fn send_with_retries(&self, body: &Value) -> Result<Vec<String>, ModelError> {
        let mut attempt = 0u32;
        loop {
            match self.send_once(body).await {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.config.retry_count => {
                    attempt += 1;
                    tracing::warn!(attempt, error = %e, "model request failed, retrying");
                    tokio::time::sleep(Duration::from_millis(100 << attempt.min(6))).await;
                }
                Err(ModelError::Network { message, .. }) => {
                    return Err(ModelError::Network { message, attempts: attempt + 1 })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[async_trait]
impl ChatModel for RemoteModel {
    async fn complete(&self, messages: &[Message], temperature: f64, n: usize) -> Result<Vec<String>, ModelError> {
        check_request(messages, temperature, n)?;
        let mut out = Vec::with_capacity(n);
        // some servers ignore `n`; top up until we hold n replies
        while out.len() < n {
            let body = request_body(&self.config.model_name, messages, temperature, n - out.len(), self.config.max_tokens)?;
            let got = self.send_with_retries(&body).await?;
            out.extend(got);
        }
        out.truncate(n);
        Ok(out)
    }
}

/// Temperature band used to key scripted responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemperatureBand {
    High,
    Low,
}

impl TemperatureBand {
    pub fn of(temperature: f64) -> Self {
        if temperature >= 0.7 {
            TemperatureBand::High
        } else {
            TemperatureBand::Low
        }
    }
}

/// Hash of the normalized transcript: the first user text followed by every
/// assistant text, each trimmed. Feedback turns and the system prompt are
/// functions of these and are not part of the key.
pub fn transcript_key(question: &str, history: &[impl AsRef<str>]) -> String {
    let mut h = Sha256::new();
    h.update(b"Q\x1f");
    h.update(question.trim().as_bytes());
    for a in history {
        h.update(b"\x1eA\x1f");
        h.update(a.as_ref().trim().as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn key_of_messages(messages: &[Message]) -> String {
    let question = messages.iter().find(|m| m.role == Role::User).map(Message::text).unwrap_or_default();
    let history: Vec<String> = messages.iter().filter(|m| m.role == Role::Assistant).map(Message::text).collect();
    transcript_key(&question, &history)
}

/// One scripted entry: replies for a given question and assistant history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub question: String,
    #[serde(default)]
    pub history: Vec<String>,
    pub band: TemperatureBand,
    pub responses: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedFixture {
    pub entries: Vec<FixtureEntry>,
}

impl ScriptedFixture {
    pub fn push(&mut self, question: &str, history: &[String], band: TemperatureBand, responses: Vec<String>) {
        self.entries.push(FixtureEntry {
            question: question.to_string(),
            history: history.to_vec(),
            band,
            responses,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedCall {
    pub key: String,
    pub band: TemperatureBand,
    pub n: usize,
}

#[derive(Default)]
struct ScriptState {
    cursors: HashMap<(String, TemperatureBand), usize>,
    calls: Vec<ScriptedCall>,
}

/// Deterministic double: canned replies keyed by normalized transcript and
/// temperature band, handed out round-robin.
#[derive(Default)]
pub struct ScriptedModel {
    responses: HashMap<(String, TemperatureBand), Vec<String>>,
    state: Mutex<ScriptState>,
}

impl ScriptedModel {
    pub fn new() -> Self {
        ScriptedModel::default()
    }

    pub fn from_fixture(fixture: &ScriptedFixture) -> Self {
        let mut m = ScriptedModel::new();
        for e in &fixture.entries {
            m.insert(&e.question, &e.history, e.band, e.responses.clone());
        }
        m
    }

    fn insert(&mut self, question: &str, history: &[String], band: TemperatureBand, responses: Vec<String>) {
        let key = transcript_key(question, history);
        self.responses.entry((key, band)).or_default().extend(responses);
    }

    /// Adds replies for `question` after the given assistant `history`.
    pub fn on(mut self, question: &str, history: &[&str], band: TemperatureBand, responses: &[&str]) -> Self {
        let history: Vec<String> = history.iter().map(|s| s.to_string()).collect();
        self.insert(question, &history, band, responses.iter().map(|s| s.to_string()).collect());
        self
    }

    /// Same replies for both temperature bands.
    pub fn on_any(self, question: &str, history: &[&str], responses: &[&str]) -> Self {
        self.on(question, history, TemperatureBand::High, responses)
            .on(question, history, TemperatureBand::Low, responses)
    }

    pub fn calls(&self) -> Vec<ScriptedCall> {
        self.state.lock().expect("scripted state poisoned").calls.clone()
    }
}

#[async_trait]
impl ChatModel for ScriptedModel {
    async fn complete(&self, messages: &[Message], temperature: f64, n: usize) -> Result<Vec<String>, ModelError> {
        check_request(messages, temperature, n)?;
        let band = TemperatureBand::of(temperature);
        let key = key_of_messages(messages);
        let replies = self
            .responses
            .get(&(key.clone(), band))
            .filter(|r| !r.is_empty())
            .ok_or_else(|| ModelError::MissingFixture { key: key.clone(), band })?;
        let mut state = self.state.lock().expect("scripted state poisoned");
        let cursor = state.cursors.entry((key.clone(), band)).or_insert(0);
        let out = (0..n).map(|i| replies[(*cursor + i) % replies.len()].clone()).collect();
        *cursor += n;
        state.calls.push(ScriptedCall { key, band, n });
        Ok(out)
    }
}

/// Serializable choice of model backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    Remote(ModelConfig),
    Scripted(ScriptedFixture),
}

impl ModelSpec {
    pub fn build(&self) -> Result<Arc<dyn ChatModel>, ModelError> {
        Ok(match self {
            ModelSpec::Remote(cfg) => Arc::new(RemoteModel::new(cfg.clone())?),
            ModelSpec::Scripted(fx) => Arc::new(ScriptedModel::from_fixture(fx)),
        })
    }
}
