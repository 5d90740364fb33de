mod config;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use sketch_client::SketchClient;
use sketch_core::api::*;
use sketch_core::dataset::load_dataset;
use sketch_core::harness::EvalConfig;
use sketch_core::synthesis::TrainingRecord;
use sketch_server::{AppState, ServerConfig};

use config::{FileConfig, ModelArgs, Resolved};

#[derive(Debug, Parser)]
#[command(name = "sketch-reasoner", version, about = "Draw-to-reason chart QA toolkit")]
struct Cli {
    /// Base URL of a running service; without it a local one is started.
    #[arg(long, global = true)]
    server: Option<String>,
    /// TOML settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for written artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Shuffle seed for data mixing.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Items processed concurrently.
    #[arg(long, global = true)]
    parallel: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Print the canonical form of a sketch file, or its diagnostics.
    Parse {
        file: PathBuf,
        /// Clamp out-of-range coordinates instead of rejecting them.
        #[arg(long)]
        lenient: bool,
        /// Print the full parse result as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Render a sketch file onto a chart (or a blank 800x600 canvas).
    Render {
        file: PathBuf,
        #[arg(long)]
        image: Option<PathBuf>,
        /// Output PNG; defaults to `<out-dir>/render.png`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run one draw-feedback session.
    Run {
        #[arg(long)]
        question: String,
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Search one question and extract preference samples.
    Search {
        #[arg(long)]
        question: String,
        #[arg(long)]
        gold: String,
        #[arg(long)]
        image: Option<PathBuf>,
        /// Named search settings: `default` or `training`.
        #[arg(long)]
        profile: Option<String>,
    },
    /// Search every item of a dataset and write all samples.
    Mine {
        dataset: PathBuf,
        #[arg(long)]
        profile: Option<String>,
    },
    /// Turn reasoning text into multi-turn records.
    Segment { dataset: PathBuf },
    /// Rewrite reasoning with a reflection, then segment it.
    Reflect { dataset: PathBuf },
    /// Mix reflective and plain record files.
    Mixdata {
        reflective: PathBuf,
        plain: PathBuf,
        /// Share of reflective records in the output.
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Evaluate a dataset with majority-vote judging.
    Eval { dataset: PathBuf },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

async fn run(cli: Cli) -> Result<ExitCode> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let cfg = config::resolve(file, &cli.model, cli.server.clone(), cli.seed, cli.parallel)?;

    if let Cmd::Serve { addr } = cli.cmd {
        let state = AppState::new(ServerConfig { model: cfg.model.clone(), judge: cfg.judge.clone() });
        sketch_server::serve(addr, state).await?;
        return Ok(ExitCode::SUCCESS);
    }

    let client = connect(&cfg).await?;
    let out = cli.out_dir.as_path();
    match cli.cmd {
        Cmd::Parse { file, lenient, json } => {
            let text = read_text(&file)?;
            let r = client.parse(&ParseRequest { text, strict: !lenient }).await?;
            if json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else if r.clean {
                println!("{}", r.canonical.trim_end());
            }
            for d in &r.diagnostics {
                eprintln!("{}: {}", file.display(), d);
            }
            return Ok(if r.clean { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Cmd::Render { file, image, output } => {
            let text = read_text(&file)?;
            let render = sketch_core::RenderConfig { strict_coords: cfg.pipeline.strict_coords, ..cfg.pipeline.render.clone() };
            let r = client.render(&RenderRequest { text, image: image_payload(image.as_deref())?, render }).await?;
            let path = output.unwrap_or_else(|| out.join("render.png"));
            write_file(&path, &decode_b64(&r.png_base64)?)?;
            println!("{}", path.display());
        }
        Cmd::Run { question, image } => {
            let req = RunRequest { question, image: image_payload(image.as_deref())?, model: cfg.model.clone(), pipeline: cfg.pipeline.clone() };
            let r = client.run(&req).await?;
            write_json(&out.join("session.json"), &r.session)?;
            write_blobs(out, &r.files)?;
            println!("status: {:?}, turns: {}", r.session.status, r.session.assistant_turns());
            if let Some(a) = &r.session.final_answer {
                println!("{a}");
            }
        }
        Cmd::Search { question, gold, image, profile } => {
            let req = SearchRequest {
                question,
                gold,
                image: image_payload(image.as_deref())?,
                model: cfg.model.clone(),
                judge: Some(cfg.judge.clone()),
                search: search_options(&cfg, profile),
                pipeline: cfg.pipeline.clone(),
            };
            let r = client.search(&req).await?;
            write_json(&out.join("tree.json"), &r.tree)?;
            write_file(&out.join("samples.jsonl"), r.samples.to_jsonl().as_bytes())?;
            write_blobs(out, &r.files)?;
            let s = &r.tree.stats;
            println!(
                "iterations: {}, successes: {}, nodes: {}, positives: {}, negatives: {}",
                s.iterations,
                s.successes,
                r.tree.len(),
                r.samples.positives().count(),
                r.samples.negatives().count()
            );
            if r.no_viable_child {
                eprintln!("warning: search produced no viable child");
            }
        }
        Cmd::Mine { dataset, profile } => {
            let req = MineRequest {
                items: dataset_items(&dataset)?,
                model: cfg.model.clone(),
                judge: Some(cfg.judge.clone()),
                search: search_options(&cfg, profile),
                pipeline: cfg.pipeline.clone(),
                parallel: cfg.parallel,
            };
            let r = client.mine(&req).await?;
            write_file(&out.join("samples.jsonl"), r.jsonl.as_bytes())?;
            write_json(&out.join("mined.json"), &r.items)?;
            for m in r.items.iter().filter(|m| m.error.is_some()) {
                eprintln!("{}: {}", m.id, m.error.as_deref().unwrap_or_default());
            }
            println!("items: {}, samples: {}", r.items.len(), r.jsonl.lines().count());
        }
        Cmd::Segment { dataset } => {
            let req = SegmentRequest { items: dataset_items(&dataset)?, pipeline: cfg.pipeline.clone() };
            report_synthesis(out, client.segment(&req).await?)?;
        }
        Cmd::Reflect { dataset } => {
            let req = ReflectRequest {
                items: dataset_items(&dataset)?,
                model: cfg.model.clone(),
                temperature: cfg.reflect_temperature,
                pipeline: cfg.pipeline.clone(),
                parallel: cfg.parallel,
            };
            report_synthesis(out, client.reflect(&req).await?)?;
        }
        Cmd::Mixdata { reflective, plain, fraction } => {
            let mut config = cfg.mix.clone();
            if let Some(f) = fraction {
                config.reflective_fraction = f;
            }
            let req = MixRequest { reflective: read_records(&reflective)?, plain: read_records(&plain)?, config };
            let r = client.mix(&req).await?;
            write_file(&out.join("mixed.jsonl"), r.jsonl.as_bytes())?;
            println!("records: {}, reflective: {}, plain: {}", r.records.len(), r.reflective, r.plain);
        }
        Cmd::Eval { dataset } => {
            let req = EvalRequest {
                items: dataset_items(&dataset)?,
                model: cfg.model.clone(),
                judge: Some(cfg.judge.clone()),
                config: EvalConfig { pipeline: cfg.pipeline.clone(), votes: cfg.votes.clone(), parallel: cfg.parallel },
            };
            let r = client.eval(&req).await?;
            r.report.write(out)?;
            let s = &r.report.summary;
            println!("accuracy: {:.4}, mean turns: {:.2}, items: {}", s.accuracy, s.mean_cot_length, r.report.rows.len());
        }
        Cmd::Serve { .. } => unreachable!("handled above"),
    }
    Ok(ExitCode::SUCCESS)
}

async fn connect(cfg: &Resolved) -> Result<SketchClient> {
    if let Some(url) = &cfg.server {
        return Ok(SketchClient::new(url.clone()));
    }
    let state = AppState::new(ServerConfig { model: cfg.model.clone(), judge: cfg.judge.clone() });
    let (addr, _) = sketch_server::spawn_local(state).await.context("starting local service")?;
    Ok(SketchClient::new(format!("http://{addr}")))
}

fn search_options(cfg: &Resolved, profile: Option<String>) -> SearchOptions {
    match profile {
        Some(p) => SearchOptions { config: None, profile: Some(p) },
        None => SearchOptions { config: cfg.search.clone(), profile: cfg.profile.clone() },
    }
}

fn read_text(path: &Path) -> Result<String> {
    if path.as_os_str() == "-" {
        return std::io::read_to_string(std::io::stdin()).context("reading stdin");
    }
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn image_payload(path: Option<&Path>) -> Result<ImagePayload> {
    match path {
        Some(p) => Ok(ImagePayload::png(&std::fs::read(p).with_context(|| format!("reading {}", p.display()))?)),
        None => Ok(ImagePayload::default()),
    }
}

fn dataset_items(path: &Path) -> Result<Vec<ItemPayload>> {
    let items = load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))?;
    Ok(items.iter().map(ItemPayload::from_item).collect())
}

fn read_records(path: &Path) -> Result<Vec<TrainingRecord>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &serde_json::to_vec_pretty(value)?)
}

fn write_blobs(dir: &Path, files: &[FileBlob]) -> Result<()> {
    for f in files {
        let rel = Path::new(&f.path);
        if rel.is_absolute() || rel.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
            bail!("refusing to write outside the output directory: {}", f.path);
        }
        write_file(&dir.join(rel), &f.bytes()?)?;
    }
    Ok(())
}

fn report_synthesis(out: &Path, r: SynthesisResponse) -> Result<()> {
    write_file(&out.join("records.jsonl"), r.jsonl.as_bytes())?;
    write_blobs(out, &r.files)?;
    for x in r.results.iter().filter(|x| x.error.is_some()) {
        eprintln!("{}: {}", x.id, x.error.as_deref().unwrap_or_default());
    }
    let ok = r.results.iter().filter(|x| x.record.is_some()).count();
    println!("records: {ok}, rejected: {}", r.results.len() - ok);
    Ok(())
}
