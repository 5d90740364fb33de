//! JSON request and response bodies shared by the service and its clients.
//! Images travel as base64 PNG.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetItem, PreparedItem};
use crate::dsl::{ParseDiagnostic, Script};
use crate::harness::{EvalConfig, EvalReport};
use crate::judge::JudgeSpec;
use crate::mcts::{MinedItem, NodeId, SampleSet, SearchConfig, SearchTree};
use crate::model::{ImageRef, Message, ModelSpec};
use crate::pipeline::{PipelineConfig, Session};
use crate::render::{BaseImage, RenderConfig};
use crate::synthesis::{MixConfig, TrainingRecord};
use crate::Canvas;

pub fn encode_b64(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn decode_b64(text: &str) -> Result<Vec<u8>, ApiError> {
    STANDARD.decode(text.trim()).map_err(|e| ApiError::bad_request(format!("invalid base64: {e}")))
}

/// Chart image supplied with a request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImagePayload {
    Png { png_base64: String },
    Blank { width: u32, height: u32 },
    /// Stands in for an image the client could not read.
    Missing { reason: String },
}

impl Default for ImagePayload {
    fn default() -> Self {
        ImagePayload::Blank { width: 800, height: 600 }
    }
}

impl ImagePayload {
    pub fn png(bytes: &[u8]) -> Self {
        ImagePayload::Png { png_base64: encode_b64(bytes) }
    }

    pub fn decode(&self) -> Result<BaseImage, ApiError> {
        match self {
            ImagePayload::Png { png_base64 } => BaseImage::from_png_bytes(&decode_b64(png_base64)?)
                .map_err(|e| ApiError::bad_request(format!("image does not decode: {e}"))),
            ImagePayload::Blank { width, height } => {
                if *width == 0 || *height == 0 || u64::from(*width) * u64::from(*height) > 64_000_000 {
                    return Err(ApiError::bad_request("blank image dimensions out of range"));
                }
                Ok(BaseImage::blank(*width, *height))
            }
            ImagePayload::Missing { reason } => Err(ApiError::bad_request(format!("image unavailable: {reason}"))),
        }
    }
}

/// A rendered frame or other image file returned by the service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileBlob {
    pub path: String,
    pub png_base64: String,
}

impl FileBlob {
    pub fn bytes(&self) -> Result<Vec<u8>, ApiError> {
        decode_b64(&self.png_base64)
    }
}

/// Every in-memory image referenced by `images`, under `prefix`, each path once.
pub fn blobs<'a>(prefix: &str, images: impl IntoIterator<Item = &'a ImageRef>) -> Vec<FileBlob> {
    let mut seen = std::collections::BTreeSet::new();
    images
        .into_iter()
        .filter_map(|img| {
            let data = img.data.as_ref()?;
            let path = if prefix.is_empty() { img.path.clone() } else { format!("{prefix}/{}", img.path) };
            seen.insert(path.clone()).then(|| FileBlob { path, png_base64: encode_b64(data) })
        })
        .collect()
}

pub fn message_images(messages: &[Message]) -> impl Iterator<Item = &ImageRef> {
    messages.iter().flat_map(Message::images)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

impl ApiError {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        ApiError { kind: kind.to_string(), message: message.into(), details: None }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new("bad-request", message)
    }

    pub fn with_details(mut self, details: impl Serialize) -> Self {
        self.details = serde_json::to_value(details).ok();
        self
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for ApiError {}

/// Dataset item with its chart inlined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemPayload {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub gold: String,
    #[serde(default)]
    pub image: ImagePayload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

impl ItemPayload {
    /// Inlines the item's image; a missing file is kept as a per-item error.
    pub fn from_item(item: &DatasetItem) -> Self {
        let image = match std::fs::read(&item.image) {
            Ok(bytes) => ImagePayload::png(&bytes),
            Err(e) => ImagePayload::Missing { reason: format!("{}: {e}", item.image.display()) },
        };
        ItemPayload {
            id: item.id.clone(),
            question: item.question.clone(),
            gold: item.gold.clone(),
            image,
            annotation: item.annotation.clone(),
            reasoning: item.reasoning.clone(),
        }
    }

    pub fn prepare(&self) -> PreparedItem {
        PreparedItem {
            item: DatasetItem {
                id: self.id.clone(),
                question: self.question.clone(),
                gold: self.gold.clone(),
                image: "inline.png".into(),
                annotation: self.annotation.clone(),
                reasoning: self.reasoning.clone(),
            },
            image: self.image.decode().map_err(|e| e.message),
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_parallel() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseRequest {
    pub text: String,
    #[serde(default = "default_true")]
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseResponse {
    pub clean: bool,
    pub scripts: Vec<Script>,
    pub canonical: String,
    pub diagnostics: Vec<ParseDiagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderRequest {
    pub text: String,
    #[serde(default)]
    pub image: ImagePayload,
    #[serde(default)]
    pub render: RenderConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderResponse {
    pub canvas: Canvas,
    pub canonical: String,
    pub png_base64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    pub question: String,
    #[serde(default)]
    pub image: ImagePayload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResponse {
    pub session: Session,
    pub files: Vec<FileBlob>,
}

/// Search settings: an explicit config wins over a named profile.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<SearchConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
}

impl SearchOptions {
    pub fn resolve(&self) -> Result<SearchConfig, ApiError> {
        let cfg = match (&self.config, &self.profile) {
            (Some(c), _) => c.clone(),
            (None, Some(p)) => {
                SearchConfig::profile(p).ok_or_else(|| ApiError::bad_request(format!("unknown search profile `{p}`")))?
            }
            (None, None) => SearchConfig::default(),
        };
        cfg.validate().map_err(ApiError::bad_request)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub question: String,
    pub gold: String,
    #[serde(default)]
    pub image: ImagePayload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<JudgeSpec>,
    #[serde(default)]
    pub search: SearchOptions,
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub best: Option<NodeId>,
    pub no_viable_child: bool,
    pub tree: SearchTree,
    pub samples: SampleSet,
    pub files: Vec<FileBlob>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MineRequest {
    pub items: Vec<ItemPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<JudgeSpec>,
    #[serde(default)]
    pub search: SearchOptions,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default = "default_parallel")]
    pub parallel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MineResponse {
    pub items: Vec<MinedItem>,
    /// Preference samples, one JSON object per line.
    pub jsonl: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub items: Vec<ItemPayload>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectRequest {
    pub items: Vec<ItemPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default = "default_reflect_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default = "default_parallel")]
    pub parallel: usize,
}

fn default_reflect_temperature() -> f64 {
    0.7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordResult {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<TrainingRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResponse {
    pub results: Vec<RecordResult>,
    /// Successful records, one JSON object per line.
    pub jsonl: String,
    pub files: Vec<FileBlob>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixRequest {
    pub reflective: Vec<TrainingRecord>,
    pub plain: Vec<TrainingRecord>,
    #[serde(default)]
    pub config: MixConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixResponse {
    pub records: Vec<TrainingRecord>,
    pub reflective: usize,
    pub plain: usize,
    pub jsonl: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub items: Vec<ItemPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<JudgeSpec>,
    #[serde(default)]
    pub config: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResponse {
    pub report: EvalReport,
    pub csv: String,
}
