//! Layered run configuration.
//!
//! Values come from, in rising precedence: built-in defaults, a TOML file,
//! `VULRAG_<SECTION>__<KEY>` environment variables and command-line flags.
//! Every key must exist in the defaults; a misspelled key is an error that
//! names the closest valid key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Value;

use crate::corpus::SplitMode;
use crate::detection::Strategy;
use crate::gateway::{ModelSettings, RetryPolicy};
use crate::retrieval::{Bm25Params, FrequencySide, RetrievalSettings};

pub const ENV_PREFIX: &str = "VULRAG_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayMode {
    /// Answers come only from the cache; nothing touches the network.
    Replay,
    /// Calls the HTTP endpoint, caching through when a cache is set.
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    pub model: String,
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    pub timeout_secs: u64,
    /// Replay cache file; empty for none.
    pub cache: String,
    pub in_flight: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    pub n: usize,
    pub final_k: usize,
    pub k: f64,
    pub b: f64,
    pub frequency: FrequencySide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    pub strategy: String,
    /// Ask cause and fix in one prompt per knowledge item.
    pub combined: bool,
    pub jobs: usize,
    /// CWE description file; empty for the built-in table.
    pub cwe_desc: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub ratio: f64,
    pub seed: u64,
    pub token_limit: usize,
    pub chars_per_token: usize,
    pub split: SplitMode,
    pub verify_diffs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeConfig {
    pub abstraction: bool,
    pub failure_budget: f64,
    pub jobs: usize,
    /// Demonstrations file; empty for the built-in pair.
    pub demos: String,
    /// Abstraction guideline file; empty for the built-in text.
    pub guidelines: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub gateway: GatewayConfig,
    pub retrieval: RetrievalConfig,
    pub detection: DetectionConfig,
    pub corpus: CorpusConfig,
    pub knowledge: KnowledgeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelSettings::default();
        let retry = RetryPolicy::default();
        let bm25 = Bm25Params::default();
        let retrieval = RetrievalSettings::default();
        RunConfig {
            gateway: GatewayConfig {
                mode: GatewayMode::Replay,
                model: model.model,
                base_url: "https://api.openai.com/v1".into(),
                api_key_env: "OPENAI_API_KEY".into(),
                temperature: model.temperature,
                max_output_tokens: model.max_output_tokens,
                max_attempts: retry.max_attempts,
                backoff_base_ms: retry.base_delay_ms,
                backoff_max_ms: retry.max_delay_ms,
                timeout_secs: 120,
                cache: String::new(),
                in_flight: 4,
            },
            retrieval: RetrievalConfig {
                n: retrieval.n,
                final_k: retrieval.final_k,
                k: bm25.k,
                b: bm25.b,
                frequency: bm25.frequency,
            },
            detection: DetectionConfig {
                strategy: Strategy::VulRag.cli_name().into(),
                combined: false,
                jobs: 4,
                cwe_desc: String::new(),
            },
            corpus: CorpusConfig {
                ratio: 0.2,
                seed: 42,
                token_limit: 16_384,
                chars_per_token: 4,
                split: SplitMode::Stratified,
                verify_diffs: false,
            },
            knowledge: KnowledgeConfig {
                abstraction: true,
                failure_budget: 0.5,
                jobs: 4,
                demos: String::new(),
                guidelines: String::new(),
            },
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{key}`{}; valid keys: {}", .suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default(), .valid.join(", "))]
    UnknownKey { key: String, suggestion: Option<String>, valid: Vec<String> },
    #[error("config key `{key}`: cannot read {value:?} as {expected}")]
    BadValue { key: String, value: String, expected: &'static str },
    #[error("config file {path}: {message}")]
    File { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn model_settings(&self) -> ModelSettings {
        ModelSettings {
            model: self.gateway.model.clone(),
            temperature: self.gateway.temperature,
            max_output_tokens: self.gateway.max_output_tokens,
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.gateway.max_attempts,
            base_delay_ms: self.gateway.backoff_base_ms,
            max_delay_ms: self.gateway.backoff_max_ms,
        }
    }

    pub fn retrieval_settings(&self) -> RetrievalSettings {
        let r = &self.retrieval;
        RetrievalSettings { n: r.n, final_k: r.final_k, bm25: Bm25Params { k: r.k, b: r.b, frequency: r.frequency } }
    }

    pub fn strategy(&self) -> Result<Strategy, ConfigError> {
        self.detection.strategy.parse().map_err(ConfigError::Invalid)
    }

    pub fn cache_path(&self) -> Option<PathBuf> {
        (!self.gateway.cache.is_empty()).then(|| PathBuf::from(&self.gateway.cache))
    }

    /// The copy written into artifact headers. Paths are cut down to their
    /// file names so the same run in another directory gives the same bytes.
    pub fn for_header(&self) -> RunConfig {
        let name = |p: &str| {
            Path::new(p).file_name().map_or_else(|| p.to_string(), |n| n.to_string_lossy().into_owned())
        };
        let mut c = self.clone();
        c.gateway.cache = name(&c.gateway.cache);
        c.detection.cwe_desc = name(&c.detection.cwe_desc);
        c.knowledge.demos = name(&c.knowledge.demos);
        c.knowledge.guidelines = name(&c.knowledge.guidelines);
        c
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.retrieval.n == 0 || self.retrieval.final_k == 0 {
            return bad("retrieval.n and retrieval.final_k must be at least 1");
        }
        if !(self.corpus.ratio > 0.0 && self.corpus.ratio < 1.0) {
            return bad("corpus.ratio must lie strictly between 0 and 1");
        }
        if self.corpus.token_limit == 0 {
            return bad("corpus.token_limit must be positive");
        }
        if !(0.0..=1.0).contains(&self.knowledge.failure_budget) {
            return bad("knowledge.failure_budget must lie in [0, 1]");
        }
        if self.gateway.temperature < 0.0 {
            return bad("gateway.temperature must not be negative");
        }
        self.strategy().map(|_| ())
    }
}

/// Every `section.key` the configuration accepts.
pub fn valid_keys() -> Vec<String> {
    let Value::Table(root) = Value::try_from(RunConfig::default()).expect("defaults serialize") else {
        unreachable!()
    };
    let mut keys = Vec::new();
    for (section, v) in &root {
        if let Value::Table(t) = v {
            keys.extend(t.keys().map(|k| format!("{section}.{k}")));
        }
    }
    keys
}

fn unknown(key: &str) -> ConfigError {
    let valid = valid_keys();
    let (section, leaf) = key.split_once('.').unwrap_or(("", key));
    let score = |cand: &str| {
        let (cs, cl) = cand.split_once('.').expect("dotted");
        if cs == section {
            strsim::levenshtein(leaf, cl)
        } else {
            strsim::levenshtein(key, cand).min(strsim::levenshtein(leaf, cl) + 1)
        }
    };
    let suggestion = valid.iter().min_by_key(|c| (score(c), (*c).clone())).filter(|c| score(c) <= 3).cloned();
    ConfigError::UnknownKey { key: key.to_string(), suggestion, valid }
}

/// Parses `raw` as the same TOML type as `default`.
fn coerce(key: &str, raw: &str, default: &Value) -> Result<Value, ConfigError> {
    let bad = |expected| ConfigError::BadValue { key: key.into(), value: raw.into(), expected };
    Ok(match default {
        Value::String(_) => Value::String(raw.to_string()),
        Value::Integer(_) => Value::Integer(raw.trim().parse().map_err(|_| bad("an integer"))?),
        Value::Float(_) => Value::Float(raw.trim().parse().map_err(|_| bad("a number"))?),
        Value::Boolean(_) => Value::Boolean(raw.trim().parse().map_err(|_| bad("true or false"))?),
        _ => return Err(bad("a scalar")),
    })
}

struct Layers {
    root: toml::map::Map<String, Value>,
}

impl Layers {
    fn slot(&mut self, key: &str) -> Result<&mut Value, ConfigError> {
        let (section, leaf) = key.split_once('.').ok_or_else(|| unknown(key))?;
        match self.root.get_mut(section) {
            Some(Value::Table(t)) => t.get_mut(leaf).ok_or_else(|| unknown(key)),
            _ => Err(unknown(key)),
        }
    }

    fn set_str(&mut self, key: &str, raw: &str) -> Result<(), ConfigError> {
        let slot = self.slot(key)?;
        *slot = coerce(key, raw, slot)?;
        Ok(())
    }

    /// Overlays a parsed file. Integers are accepted where floats are
    /// expected (`k = 1`).
    fn merge_file(&mut self, file: toml::map::Map<String, Value>) -> Result<(), ConfigError> {
        for (section, v) in file {
            let Value::Table(t) = v else { return Err(unknown(&section)) };
            for (leaf, val) in t {
                let key = format!("{section}.{leaf}");
                let slot = self.slot(&key)?;
                let val = match (&*slot, val) {
                    (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
                    (d, v) if std::mem::discriminant(d) == std::mem::discriminant(&v) => v,
                    (d, v) => {
                        return Err(ConfigError::BadValue { key, value: v.to_string(), expected: d.type_str() })
                    }
                };
                *slot = val;
            }
        }
        Ok(())
    }
}

/// Resolves the configuration.
///
/// `env` is the process environment (or a stand-in); only variables of the
/// form `VULRAG_<SECTION>__<KEY>` are read. `flags` are `section.key`,
/// value pairs, applied last.
pub fn load_config<'a>(
    file: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
    flags: impl IntoIterator<Item = (&'a str, String)>,
) -> Result<RunConfig, ConfigError> {
    let Value::Table(root) = Value::try_from(RunConfig::default()).expect("defaults serialize") else {
        unreachable!()
    };
    let mut layers = Layers { root };

    if let Some(path) = file {
        let fail = |message: String| ConfigError::File { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        let parsed: toml::map::Map<String, Value> = toml::from_str(&text).map_err(|e| fail(e.to_string()))?;
        layers.merge_file(parsed)?;
    }

    let mut env_vars: Vec<(String, String)> =
        env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX) && k.contains("__")).collect();
    env_vars.sort();
    for (name, value) in env_vars {
        let rest = &name[ENV_PREFIX.len()..];
        let (section, leaf) = rest.split_once("__").expect("filtered");
        layers.set_str(&format!("{}.{}", section.to_lowercase(), leaf.to_lowercase()), &value)?;
    }

    for (key, value) in flags {
        layers.set_str(key, &value)?;
    }

    let cfg: RunConfig = Value::Table(layers.root).try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
