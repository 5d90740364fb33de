//! Fixtures and independent oracles for the acceptance checks.

use std::collections::{HashMap, HashSet};
use std::sync::Mutex;

use async_trait::async_trait;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sketch_core::mcts::{DiscardedNode, NodeId, NodeKind, SearchConfig, SearchNode, SearchTree};
use sketch_core::model::{ChatModel, Message, ModelError, Role};

fn fnv(seed: u64, parts: &[&str]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for p in parts {
        for b in p.bytes().chain([0xff]) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Deterministic stand-in for a sampled model. Replies depend on the item
/// seed, the assistant history, the temperature band and how often that
/// history was asked before, so reruns on a fresh instance repeat exactly.
///
/// The reply mix covers every expansion outcome: fresh drawings (often
/// colliding with a sibling), redraws that add nothing, drawings that fail
/// to render, and right or wrong answers that grow likelier with depth.
pub struct ProceduralModel {
    seed: u64,
    gold: String,
    asked: Mutex<HashMap<u64, u64>>,
}

impl ProceduralModel {
    pub fn new(seed: u64, gold: &str) -> Self {
        ProceduralModel { seed, gold: gold.to_string(), asked: Mutex::new(HashMap::new()) }
    }

    fn reply(&self, history: &[String], r: u64) -> String {
        let depth = history.len() as u64;
        let roll = r % 100;
        let answer_cut = 20 + 12 * depth;
        if roll < 10 {
            return "Check the second series.\nBEGIN\ntranslate ghost 0.1 0.1\nEND".into();
        }
        if roll < 20 {
            if let Some(last) = history.iter().rev().find(|h| h.contains("BEGIN")) {
                return last.clone();
            }
        }
        if roll < answer_cut {
            let answer = if (r >> 8) % 3 == 0 { "0".to_string() } else { self.gold.clone() };
            return format!("The marks settle it.\nAnswer: {answer}");
        }
        let x = [0.2, 0.4, 0.6][((r >> 16) % 3) as usize];
        let color = ["red", "blue"][((r >> 20) % 2) as usize];
        match (r >> 24) % 3 {
            0 => format!("Mark step {depth}.\nBEGIN\ncreate_point m{depth} {x} 0.5 {color}\nEND"),
            1 => format!("Guide at {x}.\nBEGIN\ncreate_line g{depth} {x} 0.1 {x} 0.9 {color}\nEND"),
            _ => format!("Box it.\nBEGIN\ncreate_rectangle b{depth} {x} 0.3 0.8 0.7 {color}\nEND"),
        }
    }
}

#[async_trait]
impl ChatModel for ProceduralModel {
    async fn complete(&self, messages: &[Message], temperature: f64, n: usize) -> Result<Vec<String>, ModelError> {
        let history: Vec<String> = messages.iter().filter(|m| m.role == Role::Assistant).map(Message::text).collect();
        let band = if temperature >= 0.7 { "high" } else { "low" };
        let mut parts: Vec<&str> = history.iter().map(String::as_str).collect();
        parts.push(band);
        let key = fnv(self.seed, &parts);
        let mut asked = self.asked.lock().unwrap();
        let count = asked.entry(key).or_insert(0);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            *count += 1;
            out.push(self.reply(&history, splitmix(key ^ *count)));
        }
        Ok(out)
    }
}

/// Random tree of at most `max_nodes` nodes with hand-set statistics.
/// Only leaves are virtual or terminal; completion texts come from a small
/// pool so duplicates under one parent occur.
pub fn random_tree(rng: &mut ChaCha8Rng, max_nodes: usize) -> SearchTree {
    let size = rng.random_range(1..=max_nodes);
    let mut t = SearchTree::new("q", "g", vec![Message::user("q")], SearchConfig::default());
    while t.len() < size {
        let open: Vec<NodeId> = t.nodes.iter().filter(|n| !n.is_virtual && !n.terminal).map(|n| n.id).collect();
        let parent = open[rng.random_range(0..open.len())];
        let text = format!("reply {}", rng.random_range(0..6));
        let roll = rng.random_range(0..10);
        let mut node = match roll {
            0..=4 => SearchNode::detached(NodeKind::Drawn, &text),
            5 | 6 => {
                let mut n = SearchNode::detached(NodeKind::Answer, &text);
                n.terminal = true;
                n.reward = Some(if roll == 5 { 1.0 } else { 0.0 });
                n
            }
            7 => SearchNode::detached(NodeKind::RenderError, &text),
            _ => SearchNode::detached(NodeKind::InvalidReflection, &text),
        };
        if matches!(node.kind, NodeKind::RenderError | NodeKind::InvalidReflection) {
            node.is_virtual = true;
            node.reward = Some(0.0);
        } else {
            node.n = rng.random_range(0..5);
            node.q = rng.random_range(0..=node.n) as f64;
        }
        t.add_child(parent, node);
    }
    for _ in 0..rng.random_range(0..4) {
        let open: Vec<NodeId> = t.nodes.iter().filter(|n| !n.is_virtual && !n.terminal).map(|n| n.id).collect();
        let parent = open[rng.random_range(0..open.len())];
        t.discarded.push(DiscardedNode {
            parent_id: parent,
            assistant_text: format!("reply {}", rng.random_range(0..6)),
            canonical_code: String::new(),
            duplicate_of: parent,
        });
    }
    t
}

/// Expected sample: (positive?, reason, parent, completion).
pub type Expected = (bool, &'static str, NodeId, String);

fn is_correct(n: &SearchNode) -> bool {
    n.terminal && !n.is_virtual && n.reward == Some(1.0)
}

/// Brute-force best path: walk every root-to-leaf path depth first, keep
/// those ending in a correct answer, score each by the average Q/(N+eps)
/// of its non-root nodes. Depth-first order visits paths in ascending id
/// order, so a strict `>` keeps the first-created path on ties.
pub fn brute_force_path(t: &SearchTree) -> Vec<NodeId> {
    let eps = t.config.epsilon;
    let mut best: Option<(f64, Vec<NodeId>)> = None;
    let mut stack: Vec<Vec<NodeId>> = vec![vec![0]];
    let mut leaves = Vec::new();
    while let Some(path) = stack.pop() {
        let last = *path.last().unwrap();
        let kids = &t.nodes[last].children;
        if kids.is_empty() {
            leaves.push(path);
            continue;
        }
        for &c in kids.iter().rev() {
            let mut p = path.clone();
            p.push(c);
            stack.push(p);
        }
    }
    for path in leaves {
        let leaf = &t.nodes[*path.last().unwrap()];
        if !is_correct(leaf) || path.iter().any(|id| t.nodes[*id].is_virtual) {
            continue;
        }
        let mut sum = 0.0;
        for id in &path[1..] {
            let n = &t.nodes[*id];
            sum += n.q / (n.n as f64 + eps);
        }
        let score = sum / (path.len() - 1) as f64;
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, path));
        }
    }
    best.map(|(_, p)| p).unwrap_or_default()
}

/// Labels every node by the negative rules, in emission order, after the
/// positives of `path`. Repeats of a (parent, completion) pair are dropped.
pub fn rule_scan(t: &SearchTree, path: &[NodeId]) -> Vec<Expected> {
    let eps = t.config.epsilon;
    let on_path: HashSet<NodeId> = path.iter().copied().collect();
    let mut out: Vec<Expected> = Vec::new();
    let mut seen = HashSet::new();
    let mut push = |out: &mut Vec<Expected>, e: Expected| {
        if seen.insert((e.2, e.3.clone())) {
            out.push(e);
        }
    };
    for w in path.windows(2) {
        push(&mut out, (true, "best-path", w[0], t.nodes[w[1]].assistant_text.clone()));
    }
    for n in &t.nodes[1..] {
        let parent = n.parent_id.unwrap();
        let reason = if n.kind == NodeKind::RenderError {
            "render-error"
        } else if on_path.contains(&parent) && !on_path.contains(&n.id) && !is_correct(n) && n.q / (n.n as f64 + eps) <= 0.0 {
            "low-value-sibling"
        } else {
            continue;
        };
        push(&mut out, (false, reason, parent, n.assistant_text.clone()));
    }
    for d in &t.discarded {
        push(&mut out, (false, "duplicate", d.parent_id, d.assistant_text.clone()));
    }
    out
}
