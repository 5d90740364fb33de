//! Tree search over draw-feedback dialogues.
//!
//! Each node is one assistant turn (plus the feedback image it produced).
//! An iteration selects a node by a depth-penalised UCB score, expands it
//! with high-temperature samples, estimates it with a greedy low-temperature
//! rollout, and backs the reward up through its non-virtual ancestors. The
//! search stops after `sim_lim` iterations or once `succ_lim` correct
//! answers have been found during expansion.
//!
//! Children that fail to parse or render become *virtual*: they stay in the
//! tree for sample mining but are never selected or updated. A child whose
//! drawing code repeats a sibling's is discarded (and remembered); a child
//! whose marks are a subset of its parent's is virtualised as an invalid
//! reflection.

mod samples;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canvas::Canvas;
use crate::judge::Judge;
use crate::model::{ChatModel, ImageRef, Message, ModelError};
use crate::pipeline::{FeedbackRenderer, Outcome, PipelineConfig, Session, StepFailure, FEEDBACK_PREAMBLE};
use crate::render::BaseImage;

pub use samples::{best_path, extract_samples, Label, PreferenceSample, SampleReason, SampleSet};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub sim_lim: usize,
    pub succ_lim: usize,
    pub max_depth: usize,
    pub c_max: usize,
    pub max_child: usize,
    pub t_high: f64,
    pub t_low: f64,
    pub c_puct: f64,
    pub lambda_len: f64,
    pub epsilon: f64,
    /// Extra attempts for an iteration whose model or judge call failed.
    pub iteration_retries: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            sim_lim: 25,
            succ_lim: 3,
            max_depth: 8,
            c_max: 6,
            max_child: 3,
            t_high: 0.9,
            t_low: 0.4,
            c_puct: 1.9,
            lambda_len: 0.05,
            epsilon: 1e-8,
            iteration_retries: 2,
        }
    }
}

impl SearchConfig {
    /// Alternate profile with the training-run settings (`c_puct` 3.0, 15 simulations).
    pub fn training() -> Self {
        SearchConfig { c_puct: 3.0, sim_lim: 15, ..SearchConfig::default() }
    }

    pub fn profile(name: &str) -> Option<Self> {
        match name {
            "default" => Some(SearchConfig::default()),
            "training" => Some(SearchConfig::training()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.sim_lim < 1 || self.succ_lim < 1 || self.max_depth < 1 {
            return Err("sim_lim, succ_lim and max_depth must be at least 1".into());
        }
        if self.max_child < 1 || self.max_child > self.c_max {
            return Err("require 1 <= max_child <= c_max".into());
        }
        if !(self.epsilon > 0.0) {
            return Err("epsilon must be positive".into());
        }
        for (name, v) in [("t_high", self.t_high), ("t_low", self.t_low), ("c_puct", self.c_puct), ("lambda_len", self.lambda_len)] {
            if !v.is_finite() {
                return Err(format!("{name} must be finite"));
            }
        }
        Ok(())
    }
}

/// Depth-aware UCB:
/// `Q/(N+ε) + c·sqrt(ln(N_parent+1)/(N+ε)) − λ·(0.01·d + 0.3·(e^{0.7·max(0,d−4)} − 1))`.
pub fn ucb_score(q: f64, n: f64, parent_n: f64, depth: usize, cfg: &SearchConfig) -> f64 {
    let exploit = q / (n + cfg.epsilon);
    let explore = cfg.c_puct * ((parent_n + 1.0).ln() / (n + cfg.epsilon)).sqrt();
    let d = depth as f64;
    let penalty = cfg.lambda_len * (0.01 * d + 0.3 * ((0.7 * (d - 4.0).max(0.0)).exp() - 1.0));
    exploit + explore - penalty
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Root,
    /// Reply without drawing code; judged immediately.
    Answer,
    /// Reply whose drawing rendered.
    Drawn,
    /// Reply whose drawing failed to parse or apply (virtual).
    RenderError,
    /// Reply that added nothing to the parent's marks (virtual).
    InvalidReflection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub id: NodeId,
    pub parent_id: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub kind: NodeKind,
    /// Assistant text added at this node; empty for the root.
    pub assistant_text: String,
    pub canonical_code: Option<String>,
    /// Feedback frame produced by this node's drawing.
    pub bitmap: Option<ImageRef>,
    pub failure: Option<StepFailure>,
    pub canvas: Canvas,
    pub q: f64,
    pub n: u64,
    pub depth: usize,
    pub terminal: bool,
    #[serde(rename = "virtual")]
    pub is_virtual: bool,
    pub full: bool,
    pub rolled: bool,
    pub reward: Option<f64>,
}

impl SearchNode {
    fn root() -> Self {
        SearchNode {
            id: 0,
            parent_id: None,
            children: Vec::new(),
            kind: NodeKind::Root,
            assistant_text: String::new(),
            canonical_code: None,
            bitmap: None,
            failure: None,
            canvas: Canvas::new(),
            q: 0.0,
            n: 0,
            depth: 0,
            terminal: false,
            is_virtual: false,
            full: false,
            rolled: false,
            reward: None,
        }
    }

    /// Unattached node; [`SearchTree::add_child`] fills in id, parent and depth.
    pub fn detached(kind: NodeKind, assistant_text: impl Into<String>) -> Self {
        SearchNode { kind, assistant_text: assistant_text.into(), ..SearchNode::root() }
    }

    /// Mean value `Q/(N+ε)`.
    pub fn mean(&self, epsilon: f64) -> f64 {
        self.q / (self.n as f64 + epsilon)
    }

    pub fn is_correct_terminal(&self) -> bool {
        self.terminal && !self.is_virtual && self.reward == Some(1.0)
    }

    /// Messages this node appends to the dialogue.
    pub fn delta(&self) -> Vec<Message> {
        let mut out = Vec::new();
        if self.kind == NodeKind::Root {
            return out;
        }
        out.push(Message::assistant(self.assistant_text.clone()));
        if let Some(img) = &self.bitmap {
            out.push(Message::user_with_image(FEEDBACK_PREAMBLE, img.clone()));
        }
        out
    }
}

/// A reply dropped because its drawing code duplicated a sibling's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscardedNode {
    pub parent_id: NodeId,
    pub assistant_text: String,
    pub canonical_code: String,
    pub duplicate_of: NodeId,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub iterations: usize,
    pub successes: usize,
    pub backprops: usize,
    pub failed_attempts: usize,
    pub failed_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    pub question: String,
    pub gold: String,
    pub root_messages: Vec<Message>,
    pub nodes: Vec<SearchNode>,
    pub discarded: Vec<DiscardedNode>,
    pub stats: SearchStats,
    pub config: SearchConfig,
}

impl SearchTree {
    pub fn new(question: &str, gold: &str, root_messages: Vec<Message>, config: SearchConfig) -> Self {
        SearchTree {
            question: question.to_string(),
            gold: gold.to_string(),
            root_messages,
            nodes: vec![SearchNode::root()],
            discarded: Vec::new(),
            stats: SearchStats::default(),
            config,
        }
    }

    pub const ROOT: NodeId = 0;

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> &SearchNode {
        &self.nodes[Self::ROOT]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Appends a child and returns its id.
    pub fn add_child(&mut self, parent: NodeId, mut node: SearchNode) -> NodeId {
        let id = self.nodes.len();
        node.id = id;
        node.parent_id = Some(parent);
        node.depth = self.nodes[parent].depth + 1;
        self.nodes.push(node);
        self.nodes[parent].children.push(id);
        id
    }

    pub fn non_virtual_children(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes[id].children.iter().copied().filter(|c| !self.nodes[*c].is_virtual)
    }

    /// Node ids from the root to `id`, inclusive.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent_id {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Full dialogue up to and including `id`.
    pub fn transcript(&self, id: NodeId) -> Vec<Message> {
        let mut msgs = self.root_messages.clone();
        for n in self.path_to(id) {
            msgs.extend(self.nodes[n].delta());
        }
        msgs
    }

    pub fn expandable(&self, id: NodeId) -> bool {
        let n = &self.nodes[id];
        !n.terminal && !n.full && !n.is_virtual && n.depth < self.config.max_depth
    }

    pub fn ucb(&self, id: NodeId) -> f64 {
        let n = &self.nodes[id];
        let parent_n = n.parent_id.map_or(0, |p| self.nodes[p].n);
        ucb_score(n.q, n.n as f64, parent_n as f64, n.depth, &self.config)
    }

    /// Descends from the root by maximal UCB over non-virtual children until
    /// reaching an expandable node or a leaf. Ties go to the first-created child.
    pub fn select(&self) -> NodeId {
        let mut cur = Self::ROOT;
        loop {
            if self.expandable(cur) {
                return cur;
            }
            let mut best: Option<(NodeId, f64)> = None;
            for c in self.non_virtual_children(cur) {
                let score = self.ucb(c);
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((c, score));
                }
            }
            match best {
                Some((c, _)) => cur = c,
                None => return cur,
            }
        }
    }

    /// Adds `reward` to every non-virtual node from `id` up to the root.
    pub fn backprop(&mut self, id: NodeId, reward: f64) {
        let mut cur = Some(id);
        while let Some(u) = cur {
            let node = &mut self.nodes[u];
            if !node.is_virtual {
                node.n += 1;
                node.q += reward;
            }
            cur = node.parent_id;
        }
        self.stats.backprops += 1;
    }

    /// Non-virtual root child with maximal mean value.
    pub fn best_child(&self) -> Option<NodeId> {
        let eps = self.config.epsilon;
        let mut best: Option<(NodeId, f64)> = None;
        for c in self.non_virtual_children(Self::ROOT) {
            let m = self.nodes[c].mean(eps);
            if best.is_none_or(|(_, s)| m > s) {
                best = Some((c, m));
            }
        }
        best.map(|(c, _)| c)
    }

    pub fn correct_terminals(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_correct_terminal()).count()
    }

    /// Writes `tree.json` plus the base image and every in-memory node frame.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let images = self
            .root_messages
            .iter()
            .flat_map(Message::images)
            .chain(self.nodes.iter().filter_map(|n| n.bitmap.as_ref()));
        for img in images {
            if let Some(data) = &img.data {
                std::fs::write(dir.join(&img.path), data.as_slice())?;
            }
        }
        let json = serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("tree.json"), json)
    }
}

pub fn node_frame_name(id: NodeId) -> String {
    format!("node_{id}.png")
}

/// Everything a search needs besides the tree itself.
pub struct SearchContext<'a> {
    pub model: &'a dyn ChatModel,
    pub judge: &'a dyn Judge,
    pub renderer: FeedbackRenderer,
}

impl SearchContext<'_> {
    async fn judge(&self, text: &str, gold: &str) -> Result<f64, ModelError> {
        Ok(self.judge.verdict(text, gold).await?.reward())
    }
}

/// Expands `v` with up to `c_max` high-temperature samples. Returns the ids
/// of the children created (virtual ones included).
pub async fn expand(tree: &mut SearchTree, v: NodeId, ctx: &SearchContext<'_>) -> Result<Vec<NodeId>, ModelError> {
    let cfg = tree.config.clone();
    let transcript = tree.transcript(v);
    let replies = ctx.model.complete(&transcript, cfg.t_high, cfg.c_max).await?;
    let mut created = Vec::new();

    for text in replies {
        if tree.nodes[v].full {
            break;
        }
        let parent_canvas = tree.nodes[v].canvas.clone();
        let mut child = SearchNode { assistant_text: text.clone(), canvas: parent_canvas.clone(), ..SearchNode::root() };
        match ctx.renderer.advance(&parent_canvas, &text) {
            Outcome::Answer => {
                let reward = ctx.judge(&text, &tree.gold).await?;
                child.kind = NodeKind::Answer;
                child.terminal = true;
                child.reward = Some(reward);
                if reward >= 1.0 {
                    tree.stats.successes += 1;
                }
            }
            Outcome::Failed { failure, .. } => {
                child.kind = NodeKind::RenderError;
                child.is_virtual = true;
                child.reward = Some(0.0);
                child.failure = Some(failure);
            }
            Outcome::Drawn { canvas, canonical, png, .. } => {
                let dup = tree.nodes[v]
                    .children
                    .iter()
                    .copied()
                    .find(|s| tree.nodes[*s].canonical_code.as_deref() == Some(canonical.as_str()));
                if let Some(duplicate_of) = dup {
                    tree.discarded.push(DiscardedNode {
                        parent_id: v,
                        assistant_text: text,
                        canonical_code: canonical,
                        duplicate_of,
                    });
                    continue;
                }
                child.canonical_code = Some(canonical);
                if canvas.adds_nothing_to(&parent_canvas) {
                    child.kind = NodeKind::InvalidReflection;
                    child.is_virtual = true;
                    child.reward = Some(0.0);
                } else {
                    child.kind = NodeKind::Drawn;
                    child.bitmap = Some(ImageRef::inline(node_frame_name(tree.nodes.len()), png));
                }
                child.canvas = canvas;
            }
        }
        let id = tree.add_child(v, child);
        created.push(id);
        let live = tree.non_virtual_children(v).count();
        tree.nodes[v].full = live >= cfg.max_child;
    }
    Ok(created)
}

/// Greedy low-temperature continuation from `v`. Rollout turns are not added
/// to the tree. Sets `v.reward` and `v.rolled`.
pub async fn rollout(tree: &mut SearchTree, v: NodeId, ctx: &SearchContext<'_>) -> Result<f64, ModelError> {
    let cfg = tree.config.clone();
    let mut transcript = tree.transcript(v);
    let mut canvas = tree.nodes[v].canvas.clone();
    let mut depth = tree.nodes[v].depth;
    let reward = loop {
        if depth >= cfg.max_depth {
            break 0.0;
        }
        let reply = ctx
            .model
            .complete(&transcript, cfg.t_low, 1)
            .await?
            .into_iter()
            .next()
            .ok_or_else(|| ModelError::Malformed("model returned no reply".into()))?;
        depth += 1;
        match ctx.renderer.advance(&canvas, &reply) {
            Outcome::Answer => break ctx.judge(&reply, &tree.gold).await?,
            Outcome::Failed { .. } => break 0.0,
            Outcome::Drawn { canvas: next, png, .. } => {
                transcript.push(Message::assistant(reply));
                transcript.push(Message::user_with_image(FEEDBACK_PREAMBLE, ImageRef::inline("rollout.png", png)));
                canvas = next;
            }
        }
    };
    let node = &mut tree.nodes[v];
    node.reward = Some(reward);
    node.rolled = true;
    Ok(reward)
}

/// One select → expand → rollout → backprop cycle.
async fn iterate(tree: &mut SearchTree, ctx: &SearchContext<'_>) -> Result<(), ModelError> {
    let v = tree.select();
    if tree.expandable(v) {
        expand(tree, v, ctx).await?;
    }
    let node = &tree.nodes[v];
    if !node.terminal && !node.rolled && !node.is_virtual {
        rollout(tree, v, ctx).await?;
    }
    let reward = tree.nodes[v].reward.unwrap_or(0.0);
    tree.backprop(v, reward);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    /// Non-virtual root child with maximal mean value; `None` when every root child is virtual.
    pub best: Option<NodeId>,
    pub tree: SearchTree,
}

impl SearchOutcome {
    pub fn no_viable_child(&self) -> bool {
        self.best.is_none()
    }
}

/// Runs the search for one question.
pub async fn search(
    question: &str,
    base: &BaseImage,
    gold: &str,
    ctx: &SearchContext<'_>,
    config: &SearchConfig,
    pipeline: &PipelineConfig,
) -> Result<SearchOutcome, ModelError> {
    config.validate().map_err(ModelError::InvalidRequest)?;
    let session = Session::new(question, base, pipeline.system_prompt.as_deref())
        .map_err(|e| ModelError::InvalidRequest(e.to_string()))?;
    let mut tree = SearchTree::new(question, gold, session.transcript, config.clone());

    for _ in 0..config.sim_lim {
        if tree.stats.successes >= config.succ_lim {
            break;
        }
        tree.stats.iterations += 1;
        let mut attempts = 0;
        loop {
            match iterate(&mut tree, ctx).await {
                Ok(()) => break,
                Err(e) => {
                    tree.stats.failed_attempts += 1;
                    attempts += 1;
                    tracing::warn!(error = %e, attempts, "search iteration failed");
                    if attempts > config.iteration_retries {
                        tree.stats.failed_iterations += 1;
                        break;
                    }
                }
            }
        }
    }
    let best = tree.best_child();
    if best.is_none() {
        tracing::warn!("no viable root child: every child is virtual");
    }
    Ok(SearchOutcome { best, tree })
}

/// Search result for one dataset item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedItem {
    pub id: String,
    pub best: Option<NodeId>,
    pub stats: Option<SearchStats>,
    pub samples: Option<SampleSet>,
    pub error: Option<String>,
}

/// Searches every item and extracts its preference samples. Items run with at
/// most `parallel` in flight; each tree is owned by a single task.
pub async fn mine(
    items: &[crate::dataset::PreparedItem],
    model: &dyn ChatModel,
    judge: &dyn Judge,
    config: &SearchConfig,
    pipeline: &PipelineConfig,
    parallel: usize,
) -> Vec<MinedItem> {
    use futures::stream::{self, StreamExt};
    let one = |prepared: &crate::dataset::PreparedItem| {
        let item = prepared.item.clone();
        let image = prepared.image.clone();
        async move {
            let mut out = MinedItem { id: item.id.clone(), best: None, stats: None, samples: None, error: None };
            let base = match image {
                Ok(b) => b,
                Err(e) => {
                    out.error = Some(e);
                    return out;
                }
            };
            let ctx = SearchContext { model, judge, renderer: FeedbackRenderer::new(base.clone(), pipeline) };
            match search(&item.question, &base, &item.gold, &ctx, config, pipeline).await {
                Ok(res) => {
                    out.best = res.best;
                    out.samples = Some(extract_samples(&res.tree));
                    out.stats = Some(res.tree.stats);
                }
                Err(e) => out.error = Some(e.to_string()),
            }
            out
        }
    };
    let pending: Vec<_> = items.iter().map(one).collect();
    stream::iter(pending).buffered(parallel.max(1)).collect().await
}

/// JSON Lines of every sample across mined items.
pub fn mined_jsonl(items: &[MinedItem]) -> String {
    items.iter().filter_map(|m| m.samples.as_ref()).map(SampleSet::to_jsonl).collect()
}

#[cfg(test)]
mod tests;
