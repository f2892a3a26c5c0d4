//! Run configuration: defaults, then the TOML file, then command-line flags.
//!
//! ```toml
//! registry = "data/icd10.tsv"
//! output_dir = "out"
//!
//! [engine]
//! n_candidates = 5
//! max_trials = 3
//! early_stop = 0.99
//! target_grade = 6.0
//! readability_span = 10.0
//! weights = [0.3, 0.7]
//! model = "gpt-4o-2024-05-13"
//!
//! [gateway]
//! backend = "live"          # or "scripted"
//! script = "script.json"
//! endpoint = "https://api.openai.com/v1/chat/completions"
//! api_key_env = "OPENAI_API_KEY"
//!
//! [fhir]
//! base_url = "https://fhir.example.org/r4"
//! token_env = "FHIR_TOKEN"
//! ```
//!
//! Relative paths in the file are resolved against the file's directory.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use radletter_core::engine::EngineConfig;
use radletter_core::fhir::FhirServerConfig;
use radletter_core::llm::{HttpBackendConfig, RetryPolicy, DEFAULT_API_KEY_ENV, DEFAULT_ENDPOINT};
use radletter_core::{ReadabilityConfig, ScoreWeights};
use serde::Deserialize;

use crate::cli::{BackendKind, GlobalArgs};

pub const DEFAULT_OUTPUT_DIR: &str = "radletter-out";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    registry: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    #[serde(default)]
    engine: EngineSection,
    #[serde(default)]
    gateway: GatewaySection,
    fhir: Option<FhirSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EngineSection {
    n_candidates: Option<usize>,
    max_trials: Option<usize>,
    early_stop: Option<f64>,
    target_grade: Option<f64>,
    readability_span: Option<f64>,
    weights: Option<[f64; 2]>,
    model: Option<String>,
    generation_temperature: Option<f64>,
    max_output: Option<u32>,
    llm_reflection: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GatewaySection {
    backend: Option<BackendKind>,
    script: Option<PathBuf>,
    endpoint: Option<String>,
    api_key_env: Option<String>,
    timeout_secs: Option<u64>,
    max_attempts: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FhirSection {
    base_url: String,
    token_env: Option<String>,
    timeout_secs: Option<u64>,
}

#[derive(Debug, Clone)]
pub enum Gateway {
    Live(HttpBackendConfig),
    Scripted(Option<PathBuf>),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub engine: EngineConfig,
    pub gateway: Gateway,
    pub registry_path: Option<PathBuf>,
    pub fhir: Option<FhirServerConfig>,
    pub output_dir: PathBuf,
}

fn resolve(base: Option<&Path>, path: PathBuf) -> PathBuf {
    match base {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path,
    }
}

impl RunConfig {
    pub fn from_args(args: &GlobalArgs) -> Result<Self> {
        let (file, base) = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                let parsed: FileConfig =
                    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
                (parsed, path.parent().map(Path::to_path_buf))
            }
            None => (FileConfig::default(), None),
        };
        let base = base.as_deref();

        let defaults = EngineConfig::default();
        let e = &file.engine;
        let target_grade = args
            .target_grade
            .or(e.target_grade)
            .unwrap_or(defaults.readability.target_grade());
        let span = e.readability_span.unwrap_or(defaults.readability.span());
        let (wr, wa) = args
            .weights
            .or(e.weights.map(|[r, a]| (r, a)))
            .unwrap_or((defaults.weights.readability(), defaults.weights.accuracy()));
        let mut model = defaults.model.clone();
        if let Some(m) = &e.model {
            model.model_id = m.clone();
        }
        if let Some(t) = e.generation_temperature {
            model.generation_temperature = t;
        }
        if let Some(m) = e.max_output {
            model.max_output = m;
        }
        let engine = EngineConfig {
            n_candidates: args.n_candidates.or(e.n_candidates).unwrap_or(defaults.n_candidates),
            max_trials: args.max_trials.or(e.max_trials).unwrap_or(defaults.max_trials),
            early_stop: args.early_stop.or(e.early_stop).unwrap_or(defaults.early_stop),
            weights: ScoreWeights::new(wr, wa)?,
            readability: ReadabilityConfig::new(target_grade, span)?,
            model,
            llm_reflection: e.llm_reflection.unwrap_or(defaults.llm_reflection),
        };
        engine.validate()?;

        let g = &file.gateway;
        let script = args.script.clone().or_else(|| g.script.clone().map(|p| resolve(base, p)));
        let kind = args.backend.or(g.backend).unwrap_or(if script.is_some() {
            BackendKind::Scripted
        } else {
            BackendKind::Live
        });
        let gateway = match kind {
            BackendKind::Scripted => Gateway::Scripted(script),
            BackendKind::Live => {
                if args.script.is_some() {
                    bail!("--script requires the scripted backend");
                }
                let mut http = HttpBackendConfig::from_env(g.api_key_env.as_deref().unwrap_or(DEFAULT_API_KEY_ENV));
                http.endpoint = g.endpoint.clone().unwrap_or_else(|| DEFAULT_ENDPOINT.to_string());
                if let Some(secs) = g.timeout_secs {
                    http.timeout = Duration::from_secs(secs);
                }
                http.retry = RetryPolicy {
                    max_attempts: g.max_attempts.unwrap_or(RetryPolicy::default().max_attempts),
                    ..RetryPolicy::default()
                };
                Gateway::Live(http)
            }
        };

        let fhir_url = args.fhir_url.clone().or_else(|| file.fhir.as_ref().map(|f| f.base_url.clone()));
        let fhir = match fhir_url {
            Some(url) => {
                let section = file.fhir.as_ref();
                let token = section
                    .and_then(|f| f.token_env.as_deref())
                    .and_then(|var| std::env::var(var).ok())
                    .filter(|t| !t.is_empty());
                let timeout = Duration::from_secs(section.and_then(|f| f.timeout_secs).unwrap_or(30));
                Some(FhirServerConfig::new(&url, token, timeout)?)
            }
            None => None,
        };

        Ok(Self {
            engine,
            gateway,
            registry_path: args.registry.clone().or_else(|| file.registry.map(|p| resolve(base, p))),
            fhir,
            output_dir: args
                .output_dir
                .clone()
                .or_else(|| file.output_dir.map(|p| resolve(base, p)))
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
        })
    }
}
