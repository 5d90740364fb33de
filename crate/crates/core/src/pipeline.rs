//! The draw-feedback loop: parse the model's drawing code, render it over
//! the chart, hand the picture back, and stop once a reply draws nothing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::canvas::{Canvas, RenderError};
use crate::dsl::{canonicalize_all, extract_blocks, CoordMode, ParseDiagnostic, Script};
use crate::model::{ChatModel, ImageRef, Message, ModelError, Role};
use crate::render::{render_png, BaseImage, RenderConfig};

/// Text sent alongside every feedback image.
pub const FEEDBACK_PREAMBLE: &str = "Here is the image after your drawing operations.";

/// Default system prompt; override through [`PipelineConfig::system_prompt`].
pub const DEFAULT_SYSTEM_PROMPT: &str = "You answer questions about chart images. While reasoning you may draw on \
the chart by writing commands between the keywords BEGIN and END, one command per line:
create_point id x y color
create_line id x1 y1 x2 y2 color
create_circle id cx cy radius color
create_rectangle id x1 y1 x2 y2 color
create_arrow id x1 y1 x2 y2 color
translate id dx dy
rotate id angle cx cy
delete id
Coordinates are normalized so that (0, 0) is the top-left corner and (1, 1) the bottom-right. \
Colors: red, blue, green, purple, black, orange, yellow, cyan. Comments are not supported. \
After each drawing you will receive the updated image. When you are done, reply without any drawing code \
and end with `Answer: <answer>`.";

pub const BASE_IMAGE_NAME: &str = "base.png";

pub fn frame_name(k: usize) -> String {
    format!("turn_{k}.png")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub max_turns: usize,
    pub temperature: f64,
    pub strict_coords: bool,
    pub system_prompt: Option<String>,
    pub render: RenderConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_turns: 12,
            temperature: 0.4,
            strict_coords: true,
            system_prompt: Some(DEFAULT_SYSTEM_PROMPT.to_string()),
            render: RenderConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_turns < 1 {
            return Err("max_turns must be at least 1".into());
        }
        if !self.temperature.is_finite() {
            return Err("temperature must be finite".into());
        }
        self.render.validate()
    }

    pub fn coord_mode(&self) -> CoordMode {
        CoordMode::from_strict(self.strict_coords)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionStatus {
    Running,
    Finished,
    RenderFailed,
    TurnCapped,
}

/// Why a reply could not be turned into a feedback image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepFailure {
    Parse { diagnostics: Vec<ParseDiagnostic> },
    Apply { error: RenderError },
    EmptyReply,
}

impl std::fmt::Display for StepFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepFailure::Parse { diagnostics } => {
                let d: Vec<String> = diagnostics.iter().map(ToString::to_string).collect();
                write!(f, "parse failure: {}", d.join("; "))
            }
            StepFailure::Apply { error } => write!(f, "apply failure: {error}"),
            StepFailure::EmptyReply => f.write_str("empty reply"),
        }
    }
}

/// What one assistant reply does to a canvas.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    /// No drawing code: the reply is a final answer.
    Answer,
    /// Every block applied; `png` is the cumulative render.
    Drawn { canvas: Canvas, scripts: Vec<Script>, canonical: String, png: Vec<u8> },
    /// Parsing or applying failed. `canvas` holds the blocks applied before the failure.
    Failed { canvas: Canvas, failure: StepFailure },
}

/// Renders feedback frames for one base image.
#[derive(Debug, Clone)]
pub struct FeedbackRenderer {
    pub base: BaseImage,
    pub render: RenderConfig,
    pub mode: CoordMode,
    /// When set, frames are also written here as they are produced.
    pub frame_dir: Option<PathBuf>,
}

impl FeedbackRenderer {
    pub fn new(base: BaseImage, config: &PipelineConfig) -> Self {
        FeedbackRenderer { base, render: config.render.clone(), mode: config.coord_mode(), frame_dir: None }
    }

    pub fn with_frame_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.frame_dir = Some(dir.into());
        self
    }

    /// Parses `text`, applies every block in order and renders once.
    pub fn advance(&self, canvas: &Canvas, text: &str) -> Outcome {
        if text.trim().is_empty() {
            return Outcome::Failed { canvas: canvas.clone(), failure: StepFailure::EmptyReply };
        }
        let ex = extract_blocks(text, self.mode);
        if !ex.has_code() {
            return Outcome::Answer;
        }
        if !ex.is_clean() {
            return Outcome::Failed {
                canvas: canvas.clone(),
                failure: StepFailure::Parse { diagnostics: ex.diagnostics },
            };
        }
        let mut current = canvas.clone();
        for script in &ex.scripts {
            match current.apply(script) {
                Ok(next) => current = next,
                Err(error) => return Outcome::Failed { canvas: current, failure: StepFailure::Apply { error } },
            }
        }
        match render_png(&current, &self.base, &self.render) {
            Ok(png) => Outcome::Drawn { canonical: canonicalize_all(&ex.scripts), canvas: current, scripts: ex.scripts, png },
            Err(error) => Outcome::Failed { canvas: current, failure: StepFailure::Apply { error } },
        }
    }

    fn persist(&self, name: &str, png: &[u8]) -> std::io::Result<()> {
        if let Some(dir) = &self.frame_dir {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(name), png)?;
        }
        Ok(())
    }
}

/// One draw-feedback dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub question: String,
    pub base_image: ImageRef,
    pub transcript: Vec<Message>,
    pub canvas: Canvas,
    pub status: SessionStatus,
    pub final_answer: Option<String>,
    pub failure: Option<StepFailure>,
}

impl Session {
    pub fn new(question: &str, base: &BaseImage, system_prompt: Option<&str>) -> Result<Self, RenderError> {
        let base_image = ImageRef::inline(BASE_IMAGE_NAME, base.to_png()?);
        let mut transcript = Vec::new();
        if let Some(sp) = system_prompt {
            transcript.push(Message::system(sp));
        }
        transcript.push(Message::user_with_image(question, base_image.clone()));
        Ok(Session {
            question: question.to_string(),
            base_image,
            transcript,
            canvas: Canvas::new(),
            status: SessionStatus::Running,
            final_answer: None,
            failure: None,
        })
    }

    pub fn assistant_texts(&self) -> Vec<String> {
        self.transcript.iter().filter(|m| m.role == Role::Assistant).map(Message::text).collect()
    }

    pub fn assistant_turns(&self) -> usize {
        self.transcript.iter().filter(|m| m.role == Role::Assistant).count()
    }

    pub fn feedback_images(&self) -> usize {
        self.transcript
            .iter()
            .skip_while(|m| m.role != Role::Assistant)
            .filter(|m| m.role == Role::User)
            .count()
    }

    /// Writes `session.json` plus every in-memory image into `dir`.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut seen = std::collections::BTreeSet::new();
        let images = std::iter::once(&self.base_image).chain(self.transcript.iter().flat_map(Message::images));
        for img in images {
            if let Some(data) = &img.data {
                if seen.insert(img.path.clone()) {
                    std::fs::write(dir.join(&img.path), data.as_slice())?;
                }
            }
        }
        let json = serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("session.json"), json)
    }
}

/// Feeds one assistant reply through the loop. Failures become states.
pub fn step(mut session: Session, assistant_text: &str, renderer: &FeedbackRenderer) -> Session {
    if session.status != SessionStatus::Running {
        tracing::warn!(status = ?session.status, "step called on a session that is not running");
        return session;
    }
    session.transcript.push(Message::assistant(assistant_text));
    match renderer.advance(&session.canvas, assistant_text) {
        Outcome::Answer => {
            session.status = SessionStatus::Finished;
            session.final_answer = Some(assistant_text.to_string());
        }
        Outcome::Failed { canvas, failure } => {
            session.canvas = canvas;
            session.status = SessionStatus::RenderFailed;
            session.failure = Some(failure);
        }
        Outcome::Drawn { canvas, png, .. } => {
            let name = frame_name(session.feedback_images() + 1);
            if let Err(e) = renderer.persist(&name, &png) {
                session.canvas = canvas;
                session.status = SessionStatus::RenderFailed;
                session.failure = Some(StepFailure::Apply { error: RenderError::Image { message: e.to_string() } });
                return session;
            }
            session.canvas = canvas;
            session.transcript.push(Message::user_with_image(FEEDBACK_PREAMBLE, ImageRef::inline(name, png)));
        }
    }
    session
}

/// Runs the loop against `model` until an answer, a failure or the turn cap.
pub async fn run_session(
    question: &str,
    base: &BaseImage,
    model: &dyn ChatModel,
    config: &PipelineConfig,
    frame_dir: Option<&Path>,
) -> Result<Session, ModelError> {
    config.validate().map_err(ModelError::InvalidRequest)?;
    let mut renderer = FeedbackRenderer::new(base.clone(), config);
    if let Some(dir) = frame_dir {
        renderer = renderer.with_frame_dir(dir);
    }
    let mut session = Session::new(question, base, config.system_prompt.as_deref())
        .map_err(|e| ModelError::InvalidRequest(e.to_string()))?;
    while session.status == SessionStatus::Running {
        if session.assistant_turns() >= config.max_turns {
            session.status = SessionStatus::TurnCapped;
            break;
        }
        let reply = model
            .complete(&session.transcript, config.temperature, 1)
            .await?
            .into_iter()
            .next()
            .ok_or_else(|| ModelError::Malformed("model returned no reply".into()))?;
        session = step(session, &reply, &renderer);
    }
    Ok(session)
}

/// Replays assistant texts through [`step`] without a model.
pub fn replay(question: &str, base: &BaseImage, texts: &[impl AsRef<str>], config: &PipelineConfig) -> Session {
    let renderer = FeedbackRenderer::new(base.clone(), config);
    let mut session =
        Session::new(question, base, config.system_prompt.as_deref()).expect("base image encodes");
    for t in texts {
        if session.status != SessionStatus::Running {
            break;
        }
        session = step(session, t.as_ref(), &renderer);
    }
    session
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::EXAMPLE_PROGRAM;
    use crate::model::ScriptedModel;

    fn renderer() -> FeedbackRenderer {
        FeedbackRenderer::new(BaseImage::blank(64, 48), &PipelineConfig::default())
    }

    fn fresh() -> Session {
        Session::new("q?", &BaseImage::blank(64, 48), None).unwrap()
    }

    #[test]
    fn plain_reply_finishes() {
        let s = step(fresh(), "The answer is 57.", &renderer());
        assert_eq!(s.status, SessionStatus::Finished);
        assert_eq!(s.final_answer.as_deref(), Some("The answer is 57."));
        assert_eq!(s.canvas.turn, 0);
    }

    #[test]
    fn example_program_draws_four_entities() {
        let s = step(fresh(), EXAMPLE_PROGRAM, &renderer());
        assert_eq!(s.status, SessionStatus::Running);
        let ids: Vec<_> = s.canvas.entities.keys().cloned().collect();
        assert_eq!(ids, ["p1", "l1", "c1", "a1"]);
        assert_eq!(s.transcript.len(), 3);
        let fb = s.transcript.last().unwrap();
        assert_eq!(fb.role, Role::User);
        assert_eq!(fb.text(), FEEDBACK_PREAMBLE);
        assert_eq!(fb.images().map(|i| i.path.as_str()).collect::<Vec<_>>(), ["turn_1.png"]);
    }

    #[test]
    fn unknown_entity_fails_without_answer() {
        let s = step(fresh(), "BEGIN\ndelete ghost\nEND", &renderer());
        assert_eq!(s.status, SessionStatus::RenderFailed);
        assert!(s.final_answer.is_none());
        assert!(matches!(s.failure, Some(StepFailure::Apply { .. })));
    }

    #[test]
    fn parse_error_fails() {
        let s = step(fresh(), "BEGIN\ncreate_point p 2 0 red\nEND", &renderer());
        assert_eq!(s.status, SessionStatus::RenderFailed);
        assert!(matches!(s.failure, Some(StepFailure::Parse { .. })));
        let s = step(fresh(), "BEGIN create_point p 0.1 0.1 red", &renderer());
        assert_eq!(s.status, SessionStatus::RenderFailed);
    }

    #[test]
    fn multiple_blocks_one_frame() {
        let text = "a BEGIN\ncreate_point p 0.1 0.1 red\nEND b BEGIN\ncreate_point q 0.2 0.2 red\nEND c";
        let s = step(fresh(), text, &renderer());
        assert_eq!(s.canvas.turn, 2);
        assert_eq!(s.feedback_images(), 1);
    }

    #[test]
    fn frames_persist_to_dir() {
        let dir = tempfile::tempdir().unwrap();
        let r = renderer().with_frame_dir(dir.path());
        let s = step(fresh(), "BEGIN\ncreate_point p 0.1 0.1 red\nEND", &r);
        let s = step(s, "BEGIN\ndelete p\nEND", &r);
        assert!(dir.path().join("turn_1.png").exists());
        assert!(dir.path().join("turn_2.png").exists());
        s.write_dir(dir.path()).unwrap();
        let back: Session = serde_json::from_slice(&std::fs::read(dir.path().join("session.json")).unwrap()).unwrap();
        assert_eq!(back.status, s.status);
        assert_eq!(back.canvas, s.canvas);
        assert!(dir.path().join(BASE_IMAGE_NAME).exists());
    }

    #[tokio::test]
    async fn scripted_session_counts() {
        let q = "What is the value in 2015?";
        let t1 = "Find 2015. BEGIN\ncreate_point p 0.5 0.9 red\nEND";
        let t2 = "Guide up. BEGIN\ncreate_line l 0.5 0.9 0.5 0.3 blue\nEND";
        let t3 = "It reads 57. Answer: 57";
        let model = ScriptedModel::new()
            .on(q, &[], crate::model::TemperatureBand::Low, &[t1])
            .on(q, &[t1], crate::model::TemperatureBand::Low, &[t2])
            .on(q, &[t1, t2], crate::model::TemperatureBand::Low, &[t3]);
        let s = run_session(q, &BaseImage::blank(80, 60), &model, &PipelineConfig::default(), None).await.unwrap();
        assert_eq!(s.status, SessionStatus::Finished);
        assert_eq!(s.assistant_turns(), 3);
        assert_eq!(s.canvas.turn, 2);

        let again = replay(q, &BaseImage::blank(80, 60), &s.assistant_texts(), &PipelineConfig::default());
        assert_eq!(again, s);
    }

    #[tokio::test]
    async fn immediate_answer_and_missing_fixture() {
        let model = ScriptedModel::new().on_any("q", &[], &["Answer: 3"]);
        let s = run_session("q", &BaseImage::blank(8, 8), &model, &PipelineConfig::default(), None).await.unwrap();
        assert_eq!((s.status, s.canvas.turn), (SessionStatus::Finished, 0));
        let err = run_session("other", &BaseImage::blank(8, 8), &model, &PipelineConfig::default(), None).await;
        assert!(matches!(err, Err(ModelError::MissingFixture { .. })));
    }
}
