//! Settings file plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use sketch_core::harness::VoteConfig;
use sketch_core::judge::JudgeSpec;
use sketch_core::mcts::SearchConfig;
use sketch_core::model::{ModelConfig, ModelSpec, ScriptedFixture};
use sketch_core::pipeline::PipelineConfig;
use sketch_core::synthesis::MixConfig;

/// Contents of the `--config` TOML file. Every table is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub server: Option<String>,
    pub model: Option<ModelConfig>,
    /// Scripted reply fixture used instead of a remote endpoint.
    pub fixture: Option<PathBuf>,
    pub judge: Option<JudgeSpec>,
    pub judge_fixture: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub search: Option<SearchConfig>,
    pub profile: Option<String>,
    pub votes: VoteConfig,
    pub mix: MixConfig,
    pub parallel: Option<usize>,
    pub reflect_temperature: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Model-related flags shared by every subcommand.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ModelArgs {
    /// Chat-completions endpoint URL.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    /// Model name sent to the endpoint.
    #[arg(long = "model", global = true)]
    pub model_name: Option<String>,
    /// Sampling temperature for sessions and the model default.
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    /// Per-request timeout in seconds.
    #[arg(long, global = true)]
    pub timeout: Option<f64>,
    /// Environment variable holding the API key.
    #[arg(long, global = true)]
    pub api_key_env: Option<String>,
    /// JSON fixture of scripted replies; replaces the remote endpoint.
    #[arg(long, global = true)]
    pub fixture: Option<PathBuf>,
    /// JSON fixture for a scripted model judge; default is exact match.
    #[arg(long, global = true)]
    pub judge_fixture: Option<PathBuf>,
}

fn read_fixture(path: &Path) -> Result<ScriptedFixture> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading fixture {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing fixture {}", path.display()))
}

/// Everything a subcommand needs after merging file and flags.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub server: Option<String>,
    pub model: Option<ModelSpec>,
    pub judge: JudgeSpec,
    pub pipeline: PipelineConfig,
    pub search: Option<SearchConfig>,
    pub profile: Option<String>,
    pub votes: VoteConfig,
    pub mix: MixConfig,
    pub parallel: usize,
    pub reflect_temperature: f64,
}

pub fn resolve(file: FileConfig, args: &ModelArgs, server: Option<String>, seed: Option<u64>, parallel: Option<usize>) -> Result<Resolved> {
    let mut pipeline = file.pipeline;
    if let Some(t) = args.temperature {
        pipeline.temperature = t;
    }

    let remote_flags = args.endpoint.is_some()
        || args.model_name.is_some()
        || args.timeout.is_some()
        || args.api_key_env.is_some();
    let model = match args.fixture.as_ref().or(file.fixture.as_ref()) {
        Some(path) => {
            if remote_flags {
                bail!("--fixture cannot be combined with remote endpoint flags");
            }
            Some(ModelSpec::Scripted(read_fixture(path)?))
        }
        None if remote_flags || file.model.is_some() || args.temperature.is_some() => {
            let mut cfg = file.model.unwrap_or_default();
            if let Some(v) = &args.endpoint {
                cfg.endpoint_url = v.clone();
            }
            if let Some(v) = &args.model_name {
                cfg.model_name = v.clone();
            }
            if let Some(v) = args.temperature {
                cfg.temperature = v;
            }
            if let Some(v) = args.timeout {
                cfg.timeout_secs = v;
            }
            if let Some(v) = &args.api_key_env {
                cfg.api_key_env = Some(v.clone());
            }
            cfg.validate()?;
            Some(ModelSpec::Remote(cfg))
        }
        None => None,
    };

    let judge = match args.judge_fixture.as_ref().or(file.judge_fixture.as_ref()) {
        Some(path) => JudgeSpec::Model { model: ModelSpec::Scripted(read_fixture(path)?), temperature: 0.0 },
        None => file.judge.unwrap_or_default(),
    };

    let mut mix = file.mix;
    if let Some(s) = seed {
        mix.shuffle_seed = s;
    }

    Ok(Resolved {
        server: server.or(file.server),
        model,
        judge,
        pipeline,
        search: file.search,
        profile: file.profile,
        votes: file.votes,
        mix,
        parallel: parallel.or(file.parallel).unwrap_or(4),
        reflect_temperature: file.reflect_temperature.unwrap_or(0.7),
    })
}
