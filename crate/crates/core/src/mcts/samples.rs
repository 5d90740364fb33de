//! Preference samples mined from a finished search tree.
//!
//! Positives are the turns on the best path to a correct answer. Negatives
//! are zero-value siblings of that path, every reply that failed to render,
//! and every reply dropped as a duplicate during expansion.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{NodeId, NodeKind, SearchTree};
use crate::model::Message;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleReason {
    BestPath,
    LowValueSibling,
    RenderError,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSample {
    /// Dialogue up to (not including) the completion.
    pub messages: Vec<Message>,
    pub completion: String,
    pub label: Label,
    pub reason: SampleReason,
    /// Node ids from the root to the completion's parent.
    pub origin: Vec<NodeId>,
    /// Tree node carrying the completion; `None` for discarded duplicates.
    pub node: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub samples: Vec<PreferenceSample>,
    /// Root-to-terminal ids of the best path, root included.
    pub best_path: Vec<NodeId>,
    pub no_correct_terminal: bool,
}

impl SampleSet {
    pub fn positives(&self) -> impl Iterator<Item = &PreferenceSample> {
        self.samples.iter().filter(|s| s.label == Label::Positive)
    }

    pub fn negatives(&self) -> impl Iterator<Item = &PreferenceSample> {
        self.samples.iter().filter(|s| s.label == Label::Negative)
    }

    /// One JSON object per line: `{messages, completion, label, reason}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            let rec = serde_json::json!({
                "messages": s.messages,
                "completion": s.completion,
                "label": s.label,
                "reason": s.reason,
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        out
    }
}

/// Each correct terminal closes one candidate path. Paths are ranked by the
/// average `Q/(N+eps)` of their non-root nodes; on a tie the path that
/// branches off toward the first-created child wins.
pub fn best_path(tree: &SearchTree) -> Option<Vec<NodeId>> {
    let eps = tree.config.epsilon;
    let mut best: Option<(f64, Vec<NodeId>)> = None;
    for t in tree.nodes.iter().filter(|n| n.is_correct_terminal()) {
        let path = tree.path_to(t.id);
        if path.iter().any(|id| tree.nodes[*id].is_virtual) {
            continue;
        }
        let steps = &path[1..];
        let score = steps.iter().map(|id| tree.nodes[*id].mean(eps)).sum::<f64>() / steps.len() as f64;
        let better = match &best {
            None => true,
            Some((s, p)) => score > *s || (score == *s && path < *p),
        };
        if better {
            best = Some((score, path));
        }
    }
    best.map(|(_, p)| p)
}

pub fn extract_samples(tree: &SearchTree) -> SampleSet {
    let eps = tree.config.epsilon;
    let path = best_path(tree).unwrap_or_default();
    let on_path: HashSet<NodeId> = path.iter().copied().collect();

    let mut samples = Vec::new();
    let mut seen: HashSet<(NodeId, String)> = HashSet::new();
    let mut emit = |samples: &mut Vec<PreferenceSample>, parent: NodeId, node: Option<NodeId>, text: &str, label, reason| {
        if !seen.insert((parent, text.to_string())) {
            return;
        }
        samples.push(PreferenceSample {
            messages: tree.transcript(parent),
            completion: text.to_string(),
            label,
            reason,
            origin: tree.path_to(parent),
            node,
        });
    };

    for &id in path.iter().skip(1) {
        let n = &tree.nodes[id];
        emit(&mut samples, n.parent_id.unwrap_or(0), Some(id), &n.assistant_text, Label::Positive, SampleReason::BestPath);
    }

    for n in tree.nodes.iter().skip(1) {
        let parent = n.parent_id.unwrap_or(0);
        let reason = if n.kind == NodeKind::RenderError {
            SampleReason::RenderError
        } else if on_path.contains(&parent)
            && !on_path.contains(&n.id)
            && !n.is_correct_terminal()
            && n.mean(eps) <= 0.0
        {
            SampleReason::LowValueSibling
        } else {
            continue;
        };
        emit(&mut samples, parent, Some(n.id), &n.assistant_text, Label::Negative, reason);
    }

    for d in &tree.discarded {
        emit(&mut samples, d.parent_id, None, &d.assistant_text, Label::Negative, SampleReason::Duplicate);
    }

    SampleSet { samples, no_correct_terminal: path.is_empty(), best_path: path }
}
