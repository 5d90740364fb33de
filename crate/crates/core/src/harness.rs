//! Dataset evaluation with repeated judging.

use std::collections::HashMap;
use std::path::Path;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::dataset::PreparedItem;
use crate::dsl::{extract_blocks, Command, CoordMode};
use crate::judge::{Judge, Vote};
use crate::model::{ChatModel, ModelError};
use crate::pipeline::{run_session, PipelineConfig, SessionStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// Votes actually requested from the judge.
    pub votes: Vec<Vote>,
    /// How many of the `k` votes each requested vote stands for.
    pub weight: usize,
    pub decision: Vote,
}

impl Verdict {
    pub fn correct_votes(&self) -> usize {
        self.votes.iter().filter(|v| **v == Vote::Correct).count() * self.weight
    }
}

/// Threshold rule over a full set of votes.
pub fn decide(votes: &[Vote], threshold: usize) -> Vote {
    Vote::from_bool(votes.iter().filter(|v| **v == Vote::Correct).count() >= threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoteConfig {
    pub k: usize,
    pub threshold: usize,
    /// Extra attempts per vote on retryable judge errors.
    pub retries: usize,
}

impl Default for VoteConfig {
    fn default() -> Self {
        VoteConfig { k: 3, threshold: 2, retries: 2 }
    }
}

impl VoteConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.threshold < 1 || self.k < self.threshold {
            return Err("require k >= threshold >= 1".into());
        }
        Ok(())
    }
}

async fn one_vote(judge: &dyn Judge, answer: &str, gold: &str, retries: usize) -> Result<Vote, ModelError> {
    let mut attempt = 0;
    loop {
        match judge.verdict(answer, gold).await {
            Err(e) if e.is_retryable() && attempt < retries => {
                attempt += 1;
                tracing::warn!(error = %e, attempt, "retrying judge call");
            }
            other => return other,
        }
    }
}

/// Asks the judge up to `k` times and stops as soon as the threshold is met
/// or can no longer be met. A deterministic judge is asked once and its vote
/// counts `k` times.
pub async fn judge_vote(answer: &str, gold: &str, judge: &dyn Judge, cfg: &VoteConfig) -> Result<Verdict, ModelError> {
    cfg.validate().map_err(ModelError::InvalidRequest)?;
    if judge.is_deterministic() {
        let v = one_vote(judge, answer, gold, cfg.retries).await?;
        return Ok(Verdict { votes: vec![v], weight: cfg.k, decision: decide(&vec![v; cfg.k], cfg.threshold) });
    }
    let mut votes = Vec::with_capacity(cfg.k);
    let mut correct = 0;
    for asked in 1..=cfg.k {
        let v = one_vote(judge, answer, gold, cfg.retries).await?;
        votes.push(v);
        if v == Vote::Correct {
            correct += 1;
        }
        if correct >= cfg.threshold || correct + (cfg.k - asked) < cfg.threshold {
            break;
        }
    }
    let decision = Vote::from_bool(correct >= cfg.threshold);
    Ok(Verdict { votes, weight: 1, decision })
}

/// Number of assistant turns that delete or re-create an entity created in
/// an earlier turn. Turns that fail to parse are skipped.
pub fn rethink_count(assistant_texts: &[impl AsRef<str>], mode: CoordMode) -> usize {
    let mut created_in: HashMap<String, usize> = HashMap::new();
    let mut count = 0;
    for (turn, text) in assistant_texts.iter().enumerate() {
        let ex = extract_blocks(text.as_ref(), mode);
        if !ex.is_clean() {
            continue;
        }
        let mut rethink = false;
        for cmd in ex.scripts.iter().flat_map(|s| &s.commands) {
            let earlier = created_in.get(cmd.id()).is_some_and(|t| *t < turn);
            match cmd {
                Command::Delete { id } => {
                    rethink |= earlier;
                    created_in.remove(id);
                }
                c if c.is_create() => {
                    rethink |= earlier;
                    created_in.insert(c.id().to_string(), turn);
                }
                _ => {}
            }
        }
        if rethink {
            count += 1;
        }
    }
    count
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub status: Option<SessionStatus>,
    pub final_answer: Option<String>,
    /// `None` when the item could not be judged.
    pub decision: Option<Vote>,
    pub votes: Vec<Vote>,
    pub turns: usize,
    pub rethinks: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub items: usize,
    pub judged: usize,
    pub correct: usize,
    /// `correct / judged`.
    pub accuracy: f64,
    /// Mean assistant turns over judged items.
    pub mean_cot_length: f64,
    pub mean_rethinks_correct: Option<f64>,
    pub mean_rethinks_incorrect: Option<f64>,
}

fn mean(xs: impl Iterator<Item = usize>) -> Option<f64> {
    let (sum, n) = xs.fold((0usize, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum as f64 / n as f64)
}

impl EvalSummary {
    pub fn from_rows(rows: &[EvalRow]) -> Self {
        let judged: Vec<&EvalRow> = rows.iter().filter(|r| r.decision.is_some()).collect();
        let correct = judged.iter().filter(|r| r.decision == Some(Vote::Correct)).count();
        let by = |want: Vote| mean(judged.iter().filter(|r| r.decision == Some(want)).map(|r| r.rethinks));
        EvalSummary {
            items: rows.len(),
            judged: judged.len(),
            correct,
            accuracy: if judged.is_empty() { 0.0 } else { correct as f64 / judged.len() as f64 },
            mean_cot_length: mean(judged.iter().map(|r| r.turns)).unwrap_or(0.0),
            mean_rethinks_correct: by(Vote::Correct),
            mean_rethinks_incorrect: by(Vote::Incorrect),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summary: EvalSummary,
}

impl EvalReport {
    pub fn new(rows: Vec<EvalRow>) -> Self {
        EvalReport { summary: EvalSummary::from_rows(&rows), rows }
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "status", "decision", "turns", "rethinks", "final_answer", "error"])?;
        for r in &self.rows {
            let status = r.status.map(|s| serde_json::to_value(s).ok().and_then(|v| v.as_str().map(String::from)));
            let decision = match r.decision {
                Some(Vote::Correct) => "correct",
                Some(Vote::Incorrect) => "incorrect",
                None => "unjudged",
            };
            w.write_record([
                r.id.as_str(),
                status.flatten().as_deref().unwrap_or(""),
                decision,
                &r.turns.to_string(),
                &r.rethinks.to_string(),
                r.final_answer.as_deref().unwrap_or(""),
                r.error.as_deref().unwrap_or(""),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes `report.json` and `report.csv`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?)?;
        std::fs::write(dir.join("report.csv"), self.to_csv().map_err(std::io::Error::other)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub pipeline: PipelineConfig,
    pub votes: VoteConfig,
    pub parallel: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { pipeline: PipelineConfig::default(), votes: VoteConfig::default(), parallel: 4 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(String),
}

async fn evaluate_item(prepared: &PreparedItem, model: &dyn ChatModel, judge: &dyn Judge, cfg: &EvalConfig) -> EvalRow {
    let item = &prepared.item;
    let mut row = EvalRow {
        id: item.id.clone(),
        status: None,
        final_answer: None,
        decision: None,
        votes: Vec::new(),
        turns: 0,
        rethinks: 0,
        error: None,
    };
    let base = match &prepared.image {
        Ok(b) => b,
        Err(e) => {
            row.error = Some(e.clone());
            return row;
        }
    };
    let session = match run_session(&item.question, base, model, &cfg.pipeline, None).await {
        Ok(s) => s,
        Err(e) => {
            tracing::warn!(id = %item.id, error = %e, "session failed");
            row.error = Some(e.to_string());
            return row;
        }
    };
    let texts = session.assistant_texts();
    row.status = Some(session.status);
    row.turns = texts.len();
    row.rethinks = rethink_count(&texts, cfg.pipeline.coord_mode());
    row.final_answer = session.final_answer.clone();
    match &session.final_answer {
        // a session that never answered is wrong without asking the judge
        None => row.decision = Some(Vote::Incorrect),
        Some(answer) => match judge_vote(answer, &item.gold, judge, &cfg.votes).await {
            Ok(v) => {
                row.decision = Some(v.decision);
                row.votes = v.votes;
            }
            Err(e) => {
                tracing::warn!(id = %item.id, error = %e, "item left unjudged");
                row.error = Some(e.to_string());
            }
        },
    }
    row
}

/// Runs every item through the draw-feedback loop and judges the answers.
/// Item failures are recorded in their rows; rows keep dataset order.
pub async fn evaluate(
    items: &[PreparedItem],
    model: &dyn ChatModel,
    judge: &dyn Judge,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if items.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    cfg.votes.validate().map_err(EvalError::Config)?;
    cfg.pipeline.validate().map_err(EvalError::Config)?;
    let pending: Vec<_> = items.iter().map(|item| evaluate_item(item, model, judge, cfg)).collect();
    let rows = stream::iter(pending).buffered(cfg.parallel.max(1)).collect().await;
    Ok(EvalReport::new(rows))
}
