//! Answer-correctness judges.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::model::{ChatModel, Message, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vote {
    Correct,
    Incorrect,
}

impl Vote {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Vote::Correct
        } else {
            Vote::Incorrect
        }
    }

    pub fn reward(self) -> f64 {
        match self {
            Vote::Correct => 1.0,
            Vote::Incorrect => 0.0,
        }
    }
}

#[async_trait]
pub trait Judge: Send + Sync {
    async fn verdict(&self, final_answer: &str, gold: &str) -> Result<Vote, ModelError>;

    /// Deterministic judges give the same vote on every call.
    fn is_deterministic(&self) -> bool {
        false
    }
}

/// Pulls the answer out of a final reply: the text after the last
/// `answer:` / `answer is` marker when present, otherwise the whole reply.
pub fn extract_answer(text: &str) -> &str {
    let lower = text.to_lowercase();
    // lowercase can change byte lengths for some scripts; only trust ASCII markers
    let mut answer = text.trim();
    if lower.len() == text.len() {
        let hit = ["answer:", "answer is"]
            .iter()
            .filter_map(|m| lower.rfind(m).map(|i| (i, i + m.len())))
            .max_by_key(|(start, _)| *start);
        if let Some((_, end)) = hit {
            answer = text[end..].trim();
            if let Some(first_line) = answer.lines().next() {
                answer = first_line.trim();
            }
        }
    }
    answer
        .trim_start_matches(|c: char| matches!(c, '"' | '\'' | '*' | '`'))
        .trim_end_matches(|c: char| matches!(c, '"' | '\'' | '*' | '`' | '.' | '!'))
        .trim()
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn as_number(s: &str) -> Option<f64> {
    let cleaned: String = s.chars().filter(|c| *c != ',').collect();
    cleaned.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Normalized exact match: trim, case-fold, numbers within a relative tolerance.
#[derive(Debug, Clone, Copy)]
pub struct ExactMatchJudge {
    pub rel_tol: f64,
}

impl Default for ExactMatchJudge {
    fn default() -> Self {
        ExactMatchJudge { rel_tol: 1e-6 }
    }
}

impl ExactMatchJudge {
    pub fn matches(&self, final_answer: &str, gold: &str) -> bool {
        let a = normalize(extract_answer(final_answer));
        let g = normalize(extract_answer(gold));
        if a == g {
            return true;
        }
        match (as_number(&a), as_number(&g)) {
            (Some(x), Some(y)) => (x - y).abs() <= self.rel_tol * x.abs().max(y.abs()),
            _ => false,
        }
    }
}

#[async_trait]
impl Judge for ExactMatchJudge {
    async fn verdict(&self, final_answer: &str, gold: &str) -> Result<Vote, ModelError> {
        Ok(Vote::from_bool(self.matches(final_answer, gold)))
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Asks a model whether the answer agrees with the reference.
pub struct ModelJudge {
    model: Arc<dyn ChatModel>,
    temperature: f64,
}

impl ModelJudge {
    pub fn new(model: Arc<dyn ChatModel>, temperature: f64) -> Self {
        ModelJudge { model, temperature }
    }

    pub fn prompt(final_answer: &str, gold: &str) -> String {
        format!(
            "Decide whether a model's answer to a chart question agrees with the reference answer. \
             Ignore formatting, units written out in words, and minor rounding.\n\
             Reference answer: {gold}\n\
             Model answer: {final_answer}\n\
             Reply with exactly one word: correct or incorrect."
        )
    }
}

/// Reads a one-word judgement.
pub fn parse_judgement(reply: &str) -> Result<Vote, ModelError> {
    let r = reply.trim().to_lowercase();
    if r.contains("incorrect") || r.contains("not correct") {
        Ok(Vote::Incorrect)
    } else if r.contains("correct") {
        Ok(Vote::Correct)
    } else {
        Err(ModelError::Malformed(format!("unrecognized judgement `{}`", reply.trim())))
    }
}

#[async_trait]
impl Judge for ModelJudge {
    async fn verdict(&self, final_answer: &str, gold: &str) -> Result<Vote, ModelError> {
        let msgs = [Message::user(Self::prompt(extract_answer(final_answer), gold))];
        let reply = self.model.complete(&msgs, self.temperature, 1).await?;
        parse_judgement(&reply[0])
    }
}

/// Replays a fixed sequence of votes; used to exercise vote aggregation.
#[derive(Debug, Default)]
pub struct SequenceJudge {
    votes: Mutex<VecDeque<Vote>>,
    calls: Mutex<usize>,
}

impl SequenceJudge {
    pub fn new(votes: impl IntoIterator<Item = Vote>) -> Self {
        SequenceJudge { votes: Mutex::new(votes.into_iter().collect()), calls: Mutex::new(0) }
    }

    pub fn calls(&self) -> usize {
        *self.calls.lock().expect("poisoned")
    }
}

#[async_trait]
impl Judge for SequenceJudge {
    async fn verdict(&self, _final_answer: &str, _gold: &str) -> Result<Vote, ModelError> {
        *self.calls.lock().expect("poisoned") += 1;
        self.votes
            .lock()
            .expect("poisoned")
            .pop_front()
            .ok_or_else(|| ModelError::Network { message: "judge sequence exhausted".into(), attempts: 1 })
    }
}

/// Serializable choice of judge.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JudgeSpec {
    #[default]
    ExactMatch,
    Model {
        model: crate::model::ModelSpec,
        #[serde(default)]
        temperature: f64,
    },
}

impl JudgeSpec {
    pub fn build(&self) -> Result<Arc<dyn Judge>, ModelError> {
        Ok(match self {
            JudgeSpec::ExactMatch => Arc::new(ExactMatchJudge::default()),
            JudgeSpec::Model { model, temperature } => Arc::new(ModelJudge::new(model.build()?, *temperature)),
        })
    }
}
