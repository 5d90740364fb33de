//! Supervised dialogue records built from reasoning text with embedded drawings.
//!
//! [`segment`] cuts a reasoning text after every drawing block and inserts the
//! rendered feedback image, [`inject_reflection`] asks a model to rewrite a
//! chain with one mistaken drawing plus its correction, and [`mix`] combines
//! reflective and plain records at a fixed ratio.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use futures::stream::{self, StreamExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::{canonicalize, extract_blocks};
use crate::model::{ChatModel, ImageRef, Message, ModelError, Part, Role};
use crate::pipeline::{step, FeedbackRenderer, PipelineConfig, Session, SessionStatus, StepFailure};
use crate::render::BaseImage;

/// Prompt used to distil a plain drawing chain from an annotated chart.
pub const DISTILLATION_PROMPT: &str = r#"Your task is to output a simulated human-like reasoning dialogue. Since you cannot draw directly, all drawing operations must be expressed in pseudocode enclosed between the keywords BEGIN and END. The following are the requirements for the simulated dialogue:

- Do not reveal the final answer before completing the reasoning process. The answer must be derived from the reasoning steps.
- The BEGIN and END markers should be embedded within the text, and I will parse them automatically to generate the drawings.
- Your output should be conversational, interspersed with brief drawing instructions. Avoid drawing too much at once. To solve any given problem, you must draw at least twice.
- If solving a problem involving X or Y axes, you must draw auxiliary lines on the X or Y axis to locate the target.
- If the series label is shown, you do not need to align the value to the coordinate axes to obtain the number. If the label is not shown, you can align it to the coordinate axis or infer the value from other evidence.
- The output format should be similar to:
  "First, I will circle xx... BEGIN ... END. Hmm, it looks like I have drawn... Then I will... BEGIN ... END."
  After each drawing, act as if you can visually interpret the content you have drawn to make the explanation vivid.
- You must not use exhaustive methods for drawing. Draw only what is relevant to the question. For instance, if the X-axis line is missing, you need to infer the content. Partial conclusions must be derived through drawing.

Specific instructions are as follows:
1. Check and output whether all the data points involved have series label show information.
   - If series label show=True, there is no need to align the data points to the numerical axis; simply state the values based on the series label position.
   - If series label show=False, draw auxiliary lines to align the data points to the numerical axis for accurate evaluation.

2. There is no legend area annotation, so do not use rectangle to draw the legend area. Instead, use colors to describe the legend.
3. Do not reveal that you can see annotations or metadata.

Your output should be a string that simulates a human reasoning dialogue, with no additional content."#;

/// Prompt used to turn a plain chain into one with a corrected mistake.
/// The dialogue is appended after the final line.
pub const REFLECTIVE_PROMPT: &str = r#"I need you to modify and refine the following dialogue by injecting reflective processes, replacing the originally completely correct solution process.

The method is as follows: Using BEGIN and END as boundaries, everything between and including END and what comes before it is called the "former part," and everything after END is called the "latter part." To create reflection, you first need to introduce an error.

The error type should be: coordinate errors between BEGIN and END in the former part, replacing them with coordinates of other points. Subsequently, you should correct the error by discovering and fixing it in the latter part, outputting new BEGIN and END commands to complete the dialogue.

Keep the language fluent and conversational. Let me further explain: The content between BEGIN and END is an operation, and you will "see" the result of the operation after END. Therefore, your reflection process must occur immediately after the END output, not after the erroneous reasoning concludes.

Note that there is no legend area; if you see one, you should remove it and use colors to describe the legend instead. Do not include any comments in the instructions, as the instruction code does not support comments. Do not include any hints that you are deliberately making errors.

The reflection must be brief and accurate, keeping the dialogue concise and organized. You should directly modify the dialogue rather than reflecting after erroneous reasoning ends. For example: ...BEGIN instruction END
Wait/Hold on/Oh/Hmm, I might have made a mistake... (explain the reason for the mistake)... I'll redraw it now. BEGIN instruction END...

Here is the dialogue you need to modify:"#;

/// Placeholder marking where an image sits inside a flattened message.
pub const IMAGE_PLACEHOLDER: &str = "<image>";

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("reasoning contains no drawing block")]
    NoBlocks,
    #[error("segmentation failed: {0}")]
    Segmentation(StepFailure),
    #[error("reflective edit rejected: {0}")]
    Validation(String),
    #[error("not enough records to mix: {0}")]
    InsufficientRecords(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotRecord {
    /// Chain id; the reflective rewrite of a chain keeps its id.
    pub id: String,
    pub question: String,
    pub base_image: ImageRef,
    pub raw_reasoning: String,
    /// Assistant turns interleaved with feedback turns, question excluded.
    pub turns: Vec<Message>,
    pub reflective: bool,
}

impl CotRecord {
    pub fn assistant_texts(&self) -> Vec<String> {
        self.turns.iter().filter(|m| m.role == Role::Assistant).map(Message::text).collect()
    }

    /// Concatenated assistant text; equals `raw_reasoning`.
    pub fn stripped(&self) -> String {
        self.assistant_texts().concat()
    }

    pub fn block_count(&self) -> usize {
        self.turns.iter().filter(|m| m.role == Role::User).count()
    }
}

/// Cuts `raw` after each block's `END`. Each piece is fed through
/// [`step`], so the feedback images match a live session exactly.
/// Whitespace after the last block stays on the last drawing turn.
pub fn segment(
    id: &str,
    question: &str,
    raw: &str,
    base: &BaseImage,
    config: &PipelineConfig,
) -> Result<CotRecord, SynthesisError> {
    let ex = extract_blocks(raw, config.coord_mode());
    if !ex.is_clean() {
        return Err(SynthesisError::Segmentation(StepFailure::Parse { diagnostics: ex.diagnostics }));
    }
    if ex.scripts.is_empty() {
        tracing::warn!(id, "rejecting reasoning without drawing blocks");
        return Err(SynthesisError::NoBlocks);
    }
    if ex.scripts.len() < 2 {
        tracing::warn!(id, blocks = ex.scripts.len(), "reasoning draws fewer than twice");
    }

    let mut cuts: Vec<usize> = ex.scripts.iter().map(|s| s.source_span.1 + "END".len()).collect();
    let tail = &raw[*cuts.last().unwrap_or(&0)..];
    if tail.trim().is_empty() {
        cuts.pop();
    }
    let mut pieces = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0;
    for c in cuts {
        pieces.push(&raw[start..c]);
        start = c;
    }
    pieces.push(&raw[start..]);

    let renderer = FeedbackRenderer::new(base.clone(), config);
    let mut session = Session::new(question, base, config.system_prompt.as_deref())
        .map_err(|error| SynthesisError::Segmentation(StepFailure::Apply { error }))?;
    let prefix = session.transcript.len();
    for piece in pieces {
        session = step(session, piece, &renderer);
        if let Some(f) = &session.failure {
            return Err(SynthesisError::Segmentation(f.clone()));
        }
    }
    Ok(CotRecord {
        id: id.to_string(),
        question: question.to_string(),
        base_image: session.base_image,
        raw_reasoning: raw.to_string(),
        turns: session.transcript.split_off(prefix),
        reflective: false,
    })
}

pub fn reflective_request(raw: &str) -> Vec<Message> {
    vec![Message::user(format!("{REFLECTIVE_PROMPT}\n{raw}"))]
}

pub fn distillation_request(question: &str, annotation: Option<&serde_json::Value>) -> Vec<Message> {
    let mut text = format!("{DISTILLATION_PROMPT}\n\nQuestion: {question}");
    if let Some(a) = annotation {
        text.push_str(&format!("\nAnnotation: {a}"));
    }
    vec![Message::user(text)]
}

/// Checks that `edited` keeps the original blocks up to one changed block
/// followed by a differing redraw.
pub fn validate_reflection(original: &str, edited: &str, config: &PipelineConfig) -> Result<(), SynthesisError> {
    let mode = config.coord_mode();
    let before = extract_blocks(original, mode);
    let after = extract_blocks(edited, mode);
    if !after.is_clean() {
        let first = after.diagnostics.first().map(ToString::to_string).unwrap_or_default();
        return Err(SynthesisError::Validation(format!("edited text does not parse: {first}")));
    }
    let old: Vec<String> = before.scripts.iter().map(canonicalize).collect();
    let new: Vec<String> = after.scripts.iter().map(canonicalize).collect();
    if new.len() < old.len() + 1 {
        return Err(SynthesisError::Validation(format!(
            "expected at least {} blocks, found {}",
            old.len() + 1,
            new.len()
        )));
    }
    let j = old.iter().zip(&new).position(|(a, b)| a != b).unwrap_or(old.len());
    if j >= old.len() {
        return Err(SynthesisError::Validation("no original block was altered".into()));
    }
    if new[j + 1] == new[j] {
        return Err(SynthesisError::Validation("redraw repeats the erroneous block".into()));
    }
    Ok(())
}

/// Sends the reflective prompt, validates the rewrite and re-segments it.
pub async fn inject_reflection(
    record: &CotRecord,
    base: &BaseImage,
    model: &dyn ChatModel,
    temperature: f64,
    config: &PipelineConfig,
) -> Result<CotRecord, SynthesisError> {
    if record.reflective {
        return Err(SynthesisError::Validation("record is already reflective".into()));
    }
    let reply = model
        .complete(&reflective_request(&record.raw_reasoning), temperature, 1)
        .await?
        .into_iter()
        .next()
        .ok_or_else(|| ModelError::Malformed("model returned no reply".into()))?;
    validate_reflection(&record.raw_reasoning, &reply, config)?;
    let mut out = segment(&record.id, &record.question, &reply, base, config)?;
    out.reflective = true;
    Ok(out)
}

/// Runs [`inject_reflection`] over many records with at most `parallel` in flight.
/// Results keep input order.
pub async fn inject_reflection_all(
    records: &[(CotRecord, BaseImage)],
    model: &dyn ChatModel,
    temperature: f64,
    config: &PipelineConfig,
    parallel: usize,
) -> Vec<Result<CotRecord, SynthesisError>> {
    let pending: Vec<_> = records.iter().map(|(r, b)| inject_reflection(r, b, model, temperature, config)).collect();
    stream::iter(pending).buffered(parallel.max(1)).collect().await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixConfig {
    pub reflective_fraction: f64,
    pub shuffle_seed: u64,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig { reflective_fraction: 0.5, shuffle_seed: 0 }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        if !(0.0..=1.0).contains(&self.reflective_fraction) {
            return Err(SynthesisError::Config("reflective_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Reflective and plain counts for a mix of `total` records.
pub fn split_for(total: usize, fraction: f64) -> (usize, usize) {
    let r = (fraction * total as f64).round() as usize;
    (r, total - r)
}

/// Whether `r` reflective and `p` plain records can be drawn when
/// `shared` chains exist in both pools and each chain may appear once.
fn feasible(r: usize, p: usize, only_r: usize, only_p: usize, shared: usize) -> bool {
    r <= only_r + shared && p <= only_p + shared && r.saturating_sub(only_r) + p.saturating_sub(only_p) <= shared
}

/// Records that belong to a reasoning chain; both versions of a chain share the id.
pub trait Chain: Clone {
    fn chain_id(&self) -> &str;
}

impl Chain for CotRecord {
    fn chain_id(&self) -> &str {
        &self.id
    }
}

impl Chain for TrainingRecord {
    fn chain_id(&self) -> &str {
        &self.id
    }
}

/// Seeded mix hitting `reflective_fraction` of the largest feasible size.
/// A chain never appears in both its reflective and plain form.
pub fn mix<T: Chain>(reflective: &[T], plain: &[T], config: &MixConfig) -> Result<Vec<T>, SynthesisError> {
    config.validate()?;
    let f = config.reflective_fraction;
    if f > 0.0 && f < 1.0 && (reflective.is_empty() || plain.is_empty()) {
        return Err(SynthesisError::InsufficientRecords("both pools must be nonempty for a fractional mix".into()));
    }
    let by_id = |recs: &[T]| -> BTreeMap<String, T> { recs.iter().map(|r| (r.chain_id().to_string(), r.clone())).collect() };
    let rpool = by_id(reflective);
    let ppool = by_id(plain);
    let shared: BTreeSet<&String> = rpool.keys().filter(|k| ppool.contains_key(*k)).collect();
    let only_r = rpool.len() - shared.len();
    let only_p = ppool.len() - shared.len();

    let max_total = rpool.len() + ppool.len() - shared.len();
    let total = (1..=max_total)
        .rev()
        .find(|&t| {
            let (r, p) = split_for(t, config.reflective_fraction);
            feasible(r, p, only_r, only_p, shared.len())
        })
        .ok_or_else(|| {
            SynthesisError::InsufficientRecords(format!(
                "{} reflective and {} plain records cannot meet fraction {}",
                rpool.len(),
                ppool.len(),
                config.reflective_fraction
            ))
        })?;
    let (want_r, want_p) = split_for(total, config.reflective_fraction);

    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut shuffled = |ids: Vec<&String>| {
        let mut ids: Vec<String> = ids.into_iter().cloned().collect();
        ids.shuffle(&mut rng);
        ids
    };
    let r_only = shuffled(rpool.keys().filter(|k| !shared.contains(k)).collect());
    let p_only = shuffled(ppool.keys().filter(|k| !shared.contains(k)).collect());
    let both = shuffled(shared.iter().copied().collect());

    // exclusive chains first, then shared ones; reflective takes shared chains from the front
    let r_from_shared = want_r.saturating_sub(r_only.len());
    let p_from_shared = want_p.saturating_sub(p_only.len());
    let mut out: Vec<T> = Vec::with_capacity(total);
    out.extend(r_only.iter().take(want_r).map(|k| rpool[k].clone()));
    out.extend(both.iter().take(r_from_shared).map(|k| rpool[k].clone()));
    out.extend(p_only.iter().take(want_p).map(|k| ppool[k].clone()));
    out.extend(both.iter().skip(r_from_shared).take(p_from_shared).map(|k| ppool[k].clone()));
    out.shuffle(&mut rng);
    Ok(out)
}

/// Flattened training record: text messages with image placeholders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub id: String,
    pub messages: Vec<FlatMessage>,
    pub images: Vec<String>,
    pub reflective: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatMessage {
    pub role: Role,
    pub content: String,
}

/// Full dialogue for a record: optional system prompt, question with the
/// chart, then the segmented turns. Image paths are prefixed with the record id.
pub fn training_record(record: &CotRecord, system_prompt: Option<&str>) -> TrainingRecord {
    let mut msgs = Vec::new();
    if let Some(sp) = system_prompt {
        msgs.push(Message::system(sp));
    }
    msgs.push(Message::user_with_image(record.question.clone(), record.base_image.clone()));
    msgs.extend(record.turns.iter().cloned());
    let mut images = Vec::new();
    let messages = msgs
        .iter()
        .map(|m| {
            let mut content = String::new();
            for part in &m.parts {
                match part {
                    Part::Text { text } => content.push_str(text),
                    Part::Image { image } => {
                        images.push(format!("{}/{}", record.id, image.path));
                        content.push_str(IMAGE_PLACEHOLDER);
                    }
                }
            }
            FlatMessage { role: m.role, content }
        })
        .collect();
    TrainingRecord { id: record.id.clone(), messages, images, reflective: record.reflective }
}

pub fn to_jsonl(records: &[CotRecord], system_prompt: Option<&str>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&training_record(r, system_prompt)).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Writes `records.jsonl` and each record's images under `dir/<id>/`.
pub fn write_records(dir: &Path, records: &[CotRecord], system_prompt: Option<&str>) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for r in records {
        let sub = dir.join(&r.id);
        std::fs::create_dir_all(&sub)?;
        let images = std::iter::once(&r.base_image).chain(r.turns.iter().flat_map(Message::images));
        for img in images {
            if let Some(data) = &img.data {
                std::fs::write(sub.join(&img.path), data.as_slice())?;
            }
        }
    }
    std::fs::write(dir.join("records.jsonl"), to_jsonl(records, system_prompt))
}

/// Replays a record's assistant turns through a fresh session.
pub fn replays_cleanly(record: &CotRecord, base: &BaseImage, config: &PipelineConfig) -> bool {
    let session = crate::pipeline::replay(&record.question, base, &record.assistant_texts(), config);
    let frames_match = session
        .transcript
        .iter()
        .flat_map(Message::images)
        .skip(1)
        .zip(record.turns.iter().flat_map(Message::images))
        .all(|(a, b)| a.data == b.data);
    session.failure.is_none() && session.status != SessionStatus::RenderFailed && frames_match
}
