//! Request handlers as plain async functions over the shared DTOs.

use std::sync::Arc;

use sketch_core::api::*;
use sketch_core::dsl::{canonicalize_all, extract_blocks, parse_program, CoordMode};
use sketch_core::harness::{evaluate, EvalError};
use sketch_core::judge::{Judge, JudgeSpec};
use sketch_core::mcts::{self, extract_samples, SearchContext};
use sketch_core::model::{ChatModel, ModelError, ModelSpec};
use sketch_core::pipeline::{run_session, FeedbackRenderer, Outcome};
use sketch_core::synthesis::{self, inject_reflection_all, segment as segment_text, training_record, SynthesisError};
use sketch_core::Canvas;

use crate::ServerConfig;

fn model_error(e: ModelError) -> ApiError {
    match e {
        ModelError::InvalidRequest(m) => ApiError::bad_request(m),
        other => ApiError::new("model", other.to_string()).with_details(&other),
    }
}

fn model_for(cfg: &ServerConfig, requested: &Option<ModelSpec>) -> Result<Arc<dyn ChatModel>, ApiError> {
    let spec = requested
        .as_ref()
        .or(cfg.model.as_ref())
        .ok_or_else(|| ApiError::new("no-model", "no model given and the server has no default"))?;
    spec.build().map_err(model_error)
}

fn judge_for(cfg: &ServerConfig, requested: &Option<JudgeSpec>) -> Result<Arc<dyn Judge>, ApiError> {
    requested.as_ref().unwrap_or(&cfg.judge).build().map_err(model_error)
}

pub async fn parse(_: &ServerConfig, req: ParseRequest) -> Result<ParseResponse, ApiError> {
    let mode = CoordMode::from_strict(req.strict);
    let ex = extract_blocks(&req.text, mode);
    let diagnostics = match parse_program(&req.text, mode) {
        Ok(_) => Vec::new(),
        Err(d) => d,
    };
    Ok(ParseResponse { clean: diagnostics.is_empty(), canonical: canonicalize_all(&ex.scripts), scripts: ex.scripts, diagnostics })
}

pub async fn render(_: &ServerConfig, req: RenderRequest) -> Result<RenderResponse, ApiError> {
    req.render.validate().map_err(ApiError::bad_request)?;
    let renderer = FeedbackRenderer {
        base: req.image.decode()?,
        mode: CoordMode::from_strict(req.render.strict_coords),
        render: req.render,
        frame_dir: None,
    };
    match renderer.advance(&Canvas::new(), &req.text) {
        Outcome::Drawn { canvas, canonical, png, .. } => Ok(RenderResponse { canvas, canonical, png_base64: encode_b64(&png) }),
        Outcome::Answer => Err(ApiError::new("parse", "text contains no drawing block")),
        Outcome::Failed { failure, .. } => Err(ApiError::new("render", failure.to_string()).with_details(&failure)),
    }
}

pub async fn run(cfg: &ServerConfig, req: RunRequest) -> Result<RunResponse, ApiError> {
    req.pipeline.validate().map_err(ApiError::bad_request)?;
    let model = model_for(cfg, &req.model)?;
    let base = req.image.decode()?;
    let session = run_session(&req.question, &base, model.as_ref(), &req.pipeline, None).await.map_err(model_error)?;
    let files = blobs("", std::iter::once(&session.base_image).chain(message_images(&session.transcript)));
    Ok(RunResponse { session, files })
}

pub async fn search(cfg: &ServerConfig, req: SearchRequest) -> Result<SearchResponse, ApiError> {
    req.pipeline.validate().map_err(ApiError::bad_request)?;
    let search_cfg = req.search.resolve()?;
    let model = model_for(cfg, &req.model)?;
    let judge = judge_for(cfg, &req.judge)?;
    let base = req.image.decode()?;
    let ctx = SearchContext {
        model: model.as_ref(),
        judge: judge.as_ref(),
        renderer: FeedbackRenderer::new(base.clone(), &req.pipeline),
    };
    let out = mcts::search(&req.question, &base, &req.gold, &ctx, &search_cfg, &req.pipeline)
        .await
        .map_err(model_error)?;
    let samples = extract_samples(&out.tree);
    let tree = out.tree;
    let files = blobs("", message_images(&tree.root_messages).chain(tree.nodes.iter().filter_map(|n| n.bitmap.as_ref())));
    Ok(SearchResponse { best: out.best, no_viable_child: out.best.is_none(), tree, samples, files })
}

pub async fn mine(cfg: &ServerConfig, req: MineRequest) -> Result<MineResponse, ApiError> {
    if req.items.is_empty() {
        return Err(ApiError::bad_request("no items to mine"));
    }
    req.pipeline.validate().map_err(ApiError::bad_request)?;
    let search_cfg = req.search.resolve()?;
    let model = model_for(cfg, &req.model)?;
    let judge = judge_for(cfg, &req.judge)?;
    let items: Vec<_> = req.items.iter().map(ItemPayload::prepare).collect();
    let mined = mcts::mine(&items, model.as_ref(), judge.as_ref(), &search_cfg, &req.pipeline, req.parallel).await;
    Ok(MineResponse { jsonl: mcts::mined_jsonl(&mined), items: mined })
}

fn synthesis_error(e: SynthesisError) -> String {
    e.to_string()
}

fn collect(results: Vec<(String, Result<synthesis::CotRecord, String>)>, system_prompt: Option<&str>) -> SynthesisResponse {
    let mut files = Vec::new();
    let mut ok = Vec::new();
    let results = results
        .into_iter()
        .map(|(id, r)| match r {
            Ok(rec) => {
                files.extend(blobs(&rec.id, std::iter::once(&rec.base_image).chain(message_images(&rec.turns))));
                let tr = training_record(&rec, system_prompt);
                ok.push(rec);
                RecordResult { id, record: Some(tr), error: None }
            }
            Err(e) => {
                tracing::warn!(id, error = %e, "record rejected");
                RecordResult { id, record: None, error: Some(e) }
            }
        })
        .collect();
    SynthesisResponse { results, jsonl: synthesis::to_jsonl(&ok, system_prompt), files }
}

fn segment_item(item: &ItemPayload, pipeline: &sketch_core::pipeline::PipelineConfig) -> Result<(synthesis::CotRecord, sketch_core::BaseImage), String> {
    let base = item.image.decode().map_err(|e| e.message)?;
    let reasoning = item.reasoning.as_deref().ok_or("item has no reasoning text")?;
    let rec = segment_text(&item.id, &item.question, reasoning, &base, pipeline).map_err(synthesis_error)?;
    Ok((rec, base))
}

pub async fn segment(_: &ServerConfig, req: SegmentRequest) -> Result<SynthesisResponse, ApiError> {
    req.pipeline.validate().map_err(ApiError::bad_request)?;
    let results = req
        .items
        .iter()
        .map(|item| (item.id.clone(), segment_item(item, &req.pipeline).map(|(r, _)| r)))
        .collect();
    Ok(collect(results, req.pipeline.system_prompt.as_deref()))
}

pub async fn reflect(cfg: &ServerConfig, req: ReflectRequest) -> Result<SynthesisResponse, ApiError> {
    req.pipeline.validate().map_err(ApiError::bad_request)?;
    let model = model_for(cfg, &req.model)?;
    let segmented: Vec<_> = req.items.iter().map(|item| segment_item(item, &req.pipeline)).collect();
    let ready: Vec<_> = segmented.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
    let mut reflected =
        inject_reflection_all(&ready, model.as_ref(), req.temperature, &req.pipeline, req.parallel).await.into_iter();
    let results = req
        .items
        .iter()
        .zip(segmented)
        .map(|(item, seg)| {
            let r = match seg {
                Ok(_) => reflected.next().expect("one result per segmented item").map_err(synthesis_error),
                Err(e) => Err(e),
            };
            (item.id.clone(), r)
        })
        .collect();
    Ok(collect(results, req.pipeline.system_prompt.as_deref()))
}

pub async fn mix(_: &ServerConfig, req: MixRequest) -> Result<MixResponse, ApiError> {
    let records = synthesis::mix(&req.reflective, &req.plain, &req.config).map_err(|e| match e {
        SynthesisError::Config(m) => ApiError::bad_request(m),
        other => ApiError::new("insufficient-records", other.to_string()),
    })?;
    let reflective = records.iter().filter(|r| r.reflective).count();
    let mut jsonl = String::new();
    for r in &records {
        jsonl.push_str(&serde_json::to_string(r).map_err(|e| ApiError::new("internal", e.to_string()))?);
        jsonl.push('\n');
    }
    Ok(MixResponse { plain: records.len() - reflective, reflective, records, jsonl })
}

pub async fn eval(cfg: &ServerConfig, req: EvalRequest) -> Result<EvalResponse, ApiError> {
    let model = model_for(cfg, &req.model)?;
    let judge = judge_for(cfg, &req.judge)?;
    let items: Vec<_> = req.items.iter().map(ItemPayload::prepare).collect();
    let report = evaluate(&items, model.as_ref(), judge.as_ref(), &req.config).await.map_err(|e| match e {
        EvalError::EmptyDataset | EvalError::Config(_) => ApiError::bad_request(e.to_string()),
    })?;
    let csv = report.to_csv().map_err(|e| ApiError::new("internal", e.to_string()))?;
    Ok(EvalResponse { report, csv })
}
