use super::*;
use crate::judge::ExactMatchJudge;
use crate::model::{ScriptedModel, TemperatureBand::{High, Low}};
use proptest::prelude::*;

const Q: &str = "What is the value in March?";
const A: &str = "Mark the peak.\nBEGIN\ncreate_point p1 0.5 0.5 red\nEND";
const A2: &str = "Marking it again.\nBEGIN\ncreate_point p1 0.5 0.5 red\nEND";
const B: &str = "Add a guide.\nBEGIN\ncreate_line l1 0.5 0 0.5 1 blue\nEND";
const C: &str = "Circle it.\nBEGIN\ncreate_circle c1 0.5 0.5 0.1 green\nEND";
const RIGHT: &str = "Answer: 57";
const WRONG: &str = "Answer: 40";

fn renderer() -> FeedbackRenderer {
    FeedbackRenderer::new(BaseImage::blank(64, 48), &PipelineConfig::default())
}

fn tree_for(cfg: SearchConfig) -> SearchTree {
    let session = Session::new(Q, &BaseImage::blank(64, 48), None).unwrap();
    SearchTree::new(Q, "57", session.transcript, cfg)
}

fn small(c_max: usize, max_child: usize) -> SearchConfig {
    SearchConfig { c_max, max_child, ..SearchConfig::default() }
}

#[test]
fn ucb_worked_examples() {
    let cfg = SearchConfig::default();
    assert_eq!(ucb_score(0.0, 0.0, 0.0, 0, &cfg), 0.0);
    let at4 = ucb_score(0.0, 0.0, 0.0, 4, &cfg);
    assert!((at4 + 0.002).abs() < 1e-12, "{at4}");
    // 0.5 + 1.9*0.774257 - 0.05*(0.05 + 0.3*1.013753), evaluated by hand
    let v = ucb_score(2.0, 4.0, 10.0, 5, &cfg);
    assert!((v - 1.953382).abs() < 1e-4, "{v}");
}

proptest! {
    #[test]
    fn ucb_increasing_in_q(q in 0.0f64..50.0, dq in 1e-3f64..10.0, n in 0u32..60, pn in 0u32..100, d in 0usize..12) {
        let cfg = SearchConfig::default();
        let (n, pn) = (n as f64, pn as f64);
        prop_assert!(ucb_score(q + dq, n, pn, d, &cfg) > ucb_score(q, n, pn, d, &cfg));
    }

    #[test]
    fn ucb_decreasing_in_depth(q in 0.0f64..50.0, n in 0u32..60, pn in 0u32..100, d in 4usize..30) {
        let cfg = SearchConfig::default();
        let (n, pn) = (n as f64, pn as f64);
        prop_assert!(ucb_score(q, n, pn, d + 1, &cfg) < ucb_score(q, n, pn, d, &cfg));
    }
}

#[test]
fn config_validation_and_profiles() {
    assert!(SearchConfig::default().validate().is_ok());
    let p = SearchConfig::profile("training").unwrap();
    assert_eq!((p.c_puct, p.sim_lim), (3.0, 15));
    assert!(SearchConfig::profile("nope").is_none());
    assert!(SearchConfig { max_child: 7, ..SearchConfig::default() }.validate().is_err());
    assert!(SearchConfig { epsilon: 0.0, ..SearchConfig::default() }.validate().is_err());
    assert!(SearchConfig { sim_lim: 0, ..SearchConfig::default() }.validate().is_err());
}

fn drawn() -> SearchNode {
    SearchNode::detached(NodeKind::Drawn, "x")
}

#[test]
fn select_examples() {
    let mut t = tree_for(SearchConfig::default());
    assert_eq!(t.select(), SearchTree::ROOT);

    // root full so selection must descend
    t.nodes[0].full = true;
    t.nodes[0].n = 10;
    let a = t.add_child(0, drawn());
    let b = t.add_child(0, drawn());
    // a: depth 1 here, so compare against a directly computed score
    t.nodes[a].q = 2.0;
    t.nodes[a].n = 4;
    t.nodes[b].q = 2.0;
    t.nodes[b].n = 4000;
    assert!(t.ucb(a) > t.ucb(b));
    assert_eq!(t.select(), a);

    let mut v = tree_for(SearchConfig::default());
    v.nodes[0].full = true;
    for _ in 0..2 {
        let mut n = drawn();
        n.is_virtual = true;
        v.add_child(0, n);
    }
    assert_eq!(v.select(), SearchTree::ROOT);
}

#[test]
fn select_ties_go_to_first_created() {
    let mut t = tree_for(SearchConfig::default());
    t.nodes[0].full = true;
    let a = t.add_child(0, drawn());
    t.add_child(0, drawn());
    assert_eq!(t.select(), a);
}

#[test]
fn select_descends_to_expandable_node() {
    let mut t = tree_for(SearchConfig::default());
    t.nodes[0].full = true;
    let a = t.add_child(0, drawn());
    t.nodes[a].full = true;
    let b = t.add_child(a, drawn());
    assert_eq!(t.select(), b);
}

#[test]
fn backprop_examples() {
    let mut t = tree_for(SearchConfig::default());
    let a = t.add_child(0, drawn());
    let b = t.add_child(a, drawn());
    t.backprop(b, 1.0);
    for id in [0, a, b] {
        assert_eq!((t.nodes[id].n, t.nodes[id].q), (1, 1.0));
    }

    let mut t = tree_for(SearchConfig::default());
    let mut va = drawn();
    va.is_virtual = true;
    let a = t.add_child(0, va);
    let b = t.add_child(a, drawn());
    t.backprop(b, 1.0);
    assert_eq!((t.nodes[a].n, t.nodes[a].q), (0, 0.0));
    assert_eq!((t.nodes[0].n, t.nodes[b].n), (1, 1));

    let mut t = tree_for(SearchConfig::default());
    let b = t.add_child(0, drawn());
    t.backprop(b, 1.0);
    t.backprop(b, 0.0);
    assert_eq!((t.nodes[b].q, t.nodes[b].n), (1.0, 2));
    assert_eq!(t.stats.backprops, 2);
}

#[tokio::test]
async fn expand_discards_duplicate_code() {
    let model = ScriptedModel::new().on(Q, &[], High, &[A, A2, B]);
    let judge = ExactMatchJudge::default();
    let ctx = SearchContext { model: &model, judge: &judge, renderer: renderer() };
    let mut t = tree_for(small(3, 3));
    let created = expand(&mut t, 0, &ctx).await.unwrap();
    assert_eq!(created.len(), 2);
    assert_eq!(t.discarded.len(), 1);
    assert_eq!(t.discarded[0].assistant_text, A2);
    assert_eq!(t.discarded[0].duplicate_of, created[0]);
    assert!(!t.nodes[0].full);
    assert_eq!(model.calls()[0].n, 3);
    assert_eq!(model.calls()[0].band, High);
    let child = &t.nodes[created[0]];
    assert_eq!(child.depth, 1);
    assert_eq!(child.bitmap.as_ref().unwrap().path, node_frame_name(created[0]));
    assert_eq!(t.transcript(created[0]).len(), t.root_messages.len() + 2);
}

#[tokio::test]
async fn expand_virtualises_subset_child() {
    let model = ScriptedModel::new().on(Q, &[], High, &[A]).on(Q, &[A], High, &[A2, B]);
    let judge = ExactMatchJudge::default();
    let ctx = SearchContext { model: &model, judge: &judge, renderer: renderer() };
    let mut t = tree_for(small(2, 1));
    let first = expand(&mut t, 0, &ctx).await.unwrap();
    assert!(t.nodes[0].full);
    let kids = expand(&mut t, first[0], &ctx).await.unwrap();
    assert_eq!(kids.len(), 2);
    let redraw = &t.nodes[kids[0]];
    assert_eq!(redraw.kind, NodeKind::InvalidReflection);
    assert!(redraw.is_virtual && redraw.bitmap.is_none());
    assert_eq!(t.nodes[kids[1]].kind, NodeKind::Drawn);
    assert!(t.nodes[first[0]].full);
}

#[tokio::test]
async fn expand_judges_plain_answers() {
    let bad = "Oops\nBEGIN\ndelete ghost\nEND";
    let model = ScriptedModel::new().on(Q, &[], High, &[RIGHT, WRONG, bad]);
    let judge = ExactMatchJudge::default();
    let ctx = SearchContext { model: &model, judge: &judge, renderer: renderer() };
    let mut t = tree_for(small(3, 3));
    let kids = expand(&mut t, 0, &ctx).await.unwrap();
    assert_eq!(kids.len(), 3);
    let right = &t.nodes[kids[0]];
    assert!(right.terminal && right.reward == Some(1.0));
    assert_eq!(t.nodes[kids[1]].reward, Some(0.0));
    let failed = &t.nodes[kids[2]];
    assert_eq!(failed.kind, NodeKind::RenderError);
    assert!(failed.is_virtual && failed.reward == Some(0.0));
    assert_eq!(t.stats.successes, 1);
    // two non-virtual children, so not full yet
    assert!(!t.nodes[0].full);
}

#[tokio::test]
async fn rollout_examples() {
    let judge = ExactMatchJudge::default();

    let model = ScriptedModel::new().on(Q, &[], Low, &[RIGHT]);
    let ctx = SearchContext { model: &model, judge: &judge, renderer: renderer() };
    let mut t = tree_for(SearchConfig::default());
    assert_eq!(rollout(&mut t, 0, &ctx).await.unwrap(), 1.0);
    assert!(t.nodes[0].rolled);
    assert_eq!(t.nodes[0].reward, Some(1.0));
    assert_eq!(t.len(), 1);

    let model = ScriptedModel::new().on(Q, &[], Low, &["BEGIN\ncreate_point p1 2 2 red\nEND"]);
    let ctx = SearchContext { model: &model, judge: &judge, renderer: renderer() };
    let mut t = tree_for(SearchConfig::default());
    assert_eq!(rollout(&mut t, 0, &ctx).await.unwrap(), 0.0);

    let max_depth = 3;
    let model = ScriptedModel::new()
        .on(Q, &[], Low, &[A])
        .on(Q, &[A], Low, &[B])
        .on(Q, &[A, B], Low, &[C])
        .on(Q, &[A, B, C], Low, &[RIGHT]);
    let ctx = SearchContext { model: &model, judge: &judge, renderer: renderer() };
    let mut t = tree_for(SearchConfig { max_depth, ..SearchConfig::default() });
    assert_eq!(rollout(&mut t, 0, &ctx).await.unwrap(), 0.0);
    assert_eq!(model.calls().len(), max_depth);
    assert!(model.calls().iter().all(|c| c.n == 1 && c.band == Low));
    assert_eq!(t.len(), 1);
}

#[tokio::test]
async fn search_stops_early_on_successes() {
    let model = ScriptedModel::new()
        .on(Q, &[], High, &[A, B, C])
        .on(Q, &[], Low, &[WRONG])
        .on(Q, &[A], High, &[RIGHT])
        .on(Q, &[A], Low, &[RIGHT]);
    let judge = ExactMatchJudge::default();
    let ctx = SearchContext { model: &model, judge: &judge, renderer: renderer() };
    let cfg = SearchConfig::default();
    let out = search(Q, &BaseImage::blank(64, 48), "57", &ctx, &cfg, &PipelineConfig::default()).await.unwrap();
    let t = &out.tree;
    assert_eq!(t.stats.iterations, 2);
    assert!(t.stats.iterations < cfg.sim_lim);
    assert_eq!(t.stats.successes, 3);
    assert!(t.correct_terminals() >= cfg.succ_lim);
    // A was visited by its own backprop and leads to every correct answer
    assert_eq!(out.best, Some(1));
    assert_eq!(t.root().n, 2);
}

#[tokio::test]
async fn search_respects_single_simulation() {
    let model = ScriptedModel::new().on(Q, &[], High, &[A, B, C]).on(Q, &[], Low, &[WRONG]);
    let judge = ExactMatchJudge::default();
    let ctx = SearchContext { model: &model, judge: &judge, renderer: renderer() };
    let cfg = SearchConfig { sim_lim: 1, ..SearchConfig::default() };
    let out = search(Q, &BaseImage::blank(64, 48), "57", &ctx, &cfg, &PipelineConfig::default()).await.unwrap();
    assert_eq!(out.tree.stats.iterations, 1);
    assert_eq!(model.calls().len(), 2);
    assert_eq!(out.tree.root().n, 1);
    assert!(out.tree.root().rolled);
    assert_eq!(out.tree.len(), 4);
}

#[tokio::test]
async fn search_reports_no_viable_child() {
    let bad = "BEGIN\ndelete ghost\nEND";
    let model = ScriptedModel::new().on(Q, &[], High, &[bad]).on(Q, &[], Low, &[WRONG]);
    let judge = ExactMatchJudge::default();
    let ctx = SearchContext { model: &model, judge: &judge, renderer: renderer() };
    let cfg = SearchConfig { sim_lim: 3, c_max: 1, max_child: 1, ..SearchConfig::default() };
    let out = search(Q, &BaseImage::blank(64, 48), "57", &ctx, &cfg, &PipelineConfig::default()).await.unwrap();
    assert!(out.no_viable_child());
    assert!(out.tree.nodes.iter().skip(1).all(|n| n.is_virtual && n.n == 0));
}

#[tokio::test]
async fn failed_iterations_are_retried_then_skipped() {
    let model = ScriptedModel::new();
    let judge = ExactMatchJudge::default();
    let ctx = SearchContext { model: &model, judge: &judge, renderer: renderer() };
    let cfg = SearchConfig { sim_lim: 2, iteration_retries: 1, ..SearchConfig::default() };
    let out = search(Q, &BaseImage::blank(64, 48), "57", &ctx, &cfg, &PipelineConfig::default()).await.unwrap();
    assert_eq!(out.tree.stats.iterations, 2);
    assert_eq!(out.tree.stats.failed_attempts, 4);
    assert_eq!(out.tree.stats.failed_iterations, 2);
    assert!(out.best.is_none());
}

#[test]
fn best_child_by_mean() {
    let mut t = tree_for(SearchConfig::default());
    let a = t.add_child(0, drawn());
    let b = t.add_child(0, drawn());
    (t.nodes[a].q, t.nodes[a].n) = (2.0, 3);
    (t.nodes[b].q, t.nodes[b].n) = (1.0, 1);
    assert_eq!(t.best_child(), Some(b));
}

/// root ─ a (1/2) ─ b (1/1) ─ c correct
///      │         └ b2 wrong (0/1)
///      ├ a2 (0/1)
///      └ r render error
fn seven_node_tree() -> (SearchTree, [NodeId; 6]) {
    let mut t = tree_for(SearchConfig::default());
    let a = t.add_child(0, SearchNode::detached(NodeKind::Drawn, "a"));
    let a2 = t.add_child(0, SearchNode::detached(NodeKind::Drawn, "a2"));
    let mut rn = SearchNode::detached(NodeKind::RenderError, "r");
    rn.is_virtual = true;
    let r = t.add_child(0, rn);
    let b = t.add_child(a, SearchNode::detached(NodeKind::Drawn, "b"));
    let mut wrong = SearchNode::detached(NodeKind::Answer, "b2");
    wrong.terminal = true;
    wrong.reward = Some(0.0);
    let b2 = t.add_child(a, wrong);
    let mut right = SearchNode::detached(NodeKind::Answer, "c");
    right.terminal = true;
    right.reward = Some(1.0);
    let c = t.add_child(b, right);
    for (id, q, n) in [(0, 1.0, 3), (a, 1.0, 2), (a2, 0.0, 1), (b, 1.0, 1), (b2, 0.0, 1), (c, 1.0, 1)] {
        t.nodes[id].q = q;
        t.nodes[id].n = n;
    }
    (t, [a, a2, r, b, b2, c])
}

#[test]
fn extraction_on_seven_node_tree() {
    let (t, [a, a2, r, b, b2, c]) = seven_node_tree();
    assert_eq!(t.len(), 7);
    let set = extract_samples(&t);
    assert!(!set.no_correct_terminal);
    assert_eq!(set.best_path, vec![0, a, b, c]);
    let pos: Vec<_> = set.positives().map(|s| s.node.unwrap()).collect();
    assert_eq!(pos, vec![a, b, c]);
    let mut neg: Vec<_> = set.negatives().map(|s| (s.node.unwrap(), s.reason)).collect();
    neg.sort_by_key(|(id, _)| *id);
    assert_eq!(
        neg,
        vec![(a2, SampleReason::LowValueSibling), (r, SampleReason::RenderError), (b2, SampleReason::LowValueSibling)]
    );
    let bs = set.samples.iter().find(|s| s.node == Some(b)).unwrap();
    assert_eq!(bs.messages, t.transcript(a));
    assert_eq!(bs.origin, vec![0, a]);
    assert_eq!(set.to_jsonl().lines().count(), 6);
}

#[test]
fn positive_sibling_is_not_a_negative() {
    let (mut t, [_, a2, ..]) = seven_node_tree();
    (t.nodes[a2].q, t.nodes[a2].n) = (1.0, 2);
    let set = extract_samples(&t);
    assert!(set.samples.iter().all(|s| s.node != Some(a2)));
}

#[test]
fn only_incorrect_terminal_gives_no_positives() {
    let (mut t, [.., c]) = seven_node_tree();
    t.nodes[c].reward = Some(0.0);
    let set = extract_samples(&t);
    assert!(set.no_correct_terminal);
    assert_eq!(set.positives().count(), 0);
    assert_eq!(set.negatives().count(), 1);
}

#[test]
fn duplicates_become_negatives_once() {
    let (mut t, [a, ..]) = seven_node_tree();
    for _ in 0..2 {
        t.discarded.push(DiscardedNode { parent_id: a, assistant_text: "dup".into(), canonical_code: "x".into(), duplicate_of: 4 });
    }
    let set = extract_samples(&t);
    let dups: Vec<_> = set.samples.iter().filter(|s| s.reason == SampleReason::Duplicate).collect();
    assert_eq!(dups.len(), 1);
    assert_eq!(dups[0].label, Label::Negative);
    assert!(dups[0].node.is_none());
}

#[test]
fn tree_serializes_with_virtual_flag() {
    let (t, _) = seven_node_tree();
    let v = serde_json::to_value(&t).unwrap();
    assert_eq!(v["nodes"][3]["virtual"], true);
    assert_eq!(v["nodes"][1]["parent_id"], 0);
    let back: SearchTree = serde_json::from_value(v).unwrap();
    assert_eq!(back.nodes.len(), 7);
}

#[test]
fn best_path_ranks_whole_paths_by_average_value() {
    let mut t = tree_for(SearchConfig::default());
    let a = t.add_child(0, SearchNode::detached(NodeKind::Drawn, "a"));
    let b = t.add_child(0, SearchNode::detached(NodeKind::Drawn, "b"));
    let leaf = |t: &mut SearchTree, parent, text: &str| {
        let mut n = SearchNode::detached(NodeKind::Answer, text);
        n.terminal = true;
        n.reward = Some(1.0);
        t.add_child(parent, n)
    };
    let x = leaf(&mut t, a, "x");
    let y = leaf(&mut t, b, "y");
    // a looks best one level down, but b -> y has the higher average: 0.65 vs 0.5
    for (id, q, n) in [(a, 9.0, 10), (x, 1.0, 10), (b, 5.0, 10), (y, 8.0, 10)] {
        t.nodes[id].q = q;
        t.nodes[id].n = n;
    }
    t.config.epsilon = 0.0;
    assert_eq!(best_path(&t), Some(vec![0, b, y]));

    // equal averages: the path through the first-created child wins
    t.nodes[y].q = 5.0;
    t.nodes[b].q = 5.0;
    t.nodes[a].q = 9.0;
    t.nodes[x].q = 1.0;
    assert_eq!(best_path(&t), Some(vec![0, a, x]));
}
