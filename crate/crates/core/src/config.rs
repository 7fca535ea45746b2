//! Runtime configuration: a TOML file describing the service, the chat
//! backend and one or more collections, plus an optional env file holding
//! secrets.
//!
//! Secrets are referenced by environment-variable name only. Values are
//! resolved at load time, process environment first, then the env file, and
//! are held in [`Secrets`], which never serializes or prints them.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::SplitConfig;
use crate::embed::{EmbedderConfig, EmbedderKind};
use crate::http::Secret;
use crate::llm::{ChatParams, MockFallback};
use crate::prompt::ContextBudget;
use crate::retrieve::RetrievalConfig;
use crate::vectorstore::HnswParams;

/// Every tunable default in one place.
pub mod defaults {
    pub const CHUNK_SIZE: usize = 500;
    pub const CHUNK_OVERLAP: usize = 0;
    pub const SEPARATORS: [&str; 4] = ["\n\n", "\n", " ", ""];

    pub const HASH_DIM: usize = 256;
    pub const NGRAM_RANGE: (usize, usize) = (3, 5);
    pub const EMBED_BATCH_SIZE: usize = 64;
    pub const MAX_IN_FLIGHT: usize = 4;
    pub const EMBED_TIMEOUT_S: u64 = 60;

    pub const FETCH_TIMEOUT_S: u64 = 30;
    pub const FETCH_MAX_REDIRECTS: usize = 5;

    pub const HNSW_M: usize = 16;
    pub const HNSW_EF_CONSTRUCTION: usize = 200;
    pub const HNSW_EF_SEARCH: usize = 64;
    pub const HNSW_SEED: u64 = 0x00C0_FFEE_D15C_0B01;

    pub const CHAT_MODEL: &str = "gpt-3.5-turbo";
    pub const TEMPERATURE: f64 = 0.0;
    pub const CHAT_TIMEOUT_S: u64 = 60;

    pub const K: usize = 4;
    pub const N_VARIANTS: usize = 3;
    pub const HISTORY_TURNS: usize = 6;

    pub const MAX_PROMPT_TOKENS: usize = 3000;
    pub const RESERVED_ANSWER_TOKENS: usize = 500;

    pub const BIND: &str = "127.0.0.1";
    pub const PORT: u16 = 8080;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error in {file} at line {line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("missing secret: environment variable {0} is not set")]
    MissingSecret(String),
    #[error("invalid config field {field}: {message}")]
    Validation { field: String, message: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, message: impl fmt::Display) -> Self {
        ConfigError::Validation {
            field: field.into(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    /// Hosts that URL ingestion may contact. `"*"` allows any host.
    pub fetch_allowlist: Vec<String>,
    /// Origins allowed to make cross-origin requests. `"*"` allows any.
    pub cors_origins: Vec<String>,
    pub fetch_timeout_s: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: defaults::BIND.to_string(),
            port: defaults::PORT,
            fetch_allowlist: Vec::new(),
            cors_origins: Vec::new(),
            fetch_timeout_s: defaults::FETCH_TIMEOUT_S,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatBackend {
    Remote,
    #[default]
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FallbackMode {
    #[default]
    Echo,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    pub contains: String,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    pub fallback: FallbackMode,
    pub fixed_reply: Option<String>,
    pub rules: Vec<MockRule>,
}

impl MockConfig {
    pub fn fallback(&self) -> MockFallback {
        match self.fallback {
            FallbackMode::Echo => MockFallback::Echo,
            FallbackMode::Fixed => MockFallback::Fixed(self.fixed_reply.clone().unwrap_or_default()),
        }
    }

    pub fn rules(&self) -> Vec<(String, String)> {
        self.rules.iter().map(|r| (r.contains.clone(), r.reply.clone())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatConfig {
    pub backend: ChatBackend,
    pub endpoint: Option<String>,
    pub api_key_ref: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub timeout_s: u64,
    pub mock: MockConfig,
}

impl Default for ChatConfig {
    fn default() -> Self {
        let p = ChatParams::default();
        Self {
            backend: ChatBackend::default(),
            endpoint: None,
            api_key_ref: None,
            model: p.model,
            temperature: p.temperature,
            max_tokens: p.max_tokens,
            timeout_s: p.timeout_s,
            mock: MockConfig::default(),
        }
    }
}

impl ChatConfig {
    pub fn params(&self) -> ChatParams {
        ChatParams {
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            timeout_s: self.timeout_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionConfig {
    /// Resolved against the config file's directory when relative.
    pub store_path: PathBuf,
    #[serde(default)]
    pub splitter: SplitConfig,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub budget: ContextBudget,
    #[serde(default)]
    pub hnsw: HnswParams,
}

impl CollectionConfig {
    pub fn new(store_path: impl Into<PathBuf>) -> Self {
        Self {
            store_path: store_path.into(),
            splitter: SplitConfig::default(),
            embedder: EmbedderConfig::default(),
            retrieval: RetrievalConfig::default(),
            budget: ContextBudget::default(),
            hnsw: HnswParams::default(),
        }
    }
}

/// Resolved secret values keyed by environment-variable name.
#[derive(Clone, Default)]
pub struct Secrets(BTreeMap<String, Secret>);

impl Secrets {
    pub fn get(&self, name: &str) -> Option<&Secret> {
        self.0.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Secret) {
        self.0.insert(name.into(), value);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }
}

impl fmt::Debug for Secrets {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.0.keys()).finish()
    }
}

impl PartialEq for Secrets {
    fn eq(&self, other: &Self) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|((ka, va), (kb, vb))| ka == kb && va.expose() == vb.expose())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub service: ServiceConfig,
    pub chat: ChatConfig,
    pub collections: BTreeMap<String, CollectionConfig>,
    #[serde(skip)]
    pub secrets: Secrets,
}

impl AppConfig {
    /// Env-var names this config needs, in a stable order.
    pub fn secret_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.chat.backend == ChatBackend::Remote {
            names.extend(self.chat.api_key_ref.clone());
        }
        for c in self.collections.values() {
            if c.embedder.kind == EmbedderKind::Remote {
                names.extend(c.embedder.api_key_ref.clone());
            }
        }
        names.sort();
        names.dedup();
        names
    }

    /// Checks every field invariant, naming the first offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.service.bind.trim().is_empty() {
            return Err(ConfigError::invalid("service.bind", "must not be empty"));
        }
        if self.service.fetch_timeout_s == 0 {
            return Err(ConfigError::invalid("service.fetch_timeout_s", "must be >= 1"));
        }
        self.chat
            .params()
            .validate()
            .map_err(|e| ConfigError::invalid("chat.temperature", e))?;
        match self.chat.backend {
            ChatBackend::Remote => {
                for (field, value) in [("chat.endpoint", &self.chat.endpoint), ("chat.api_key_ref", &self.chat.api_key_ref)] {
                    if value.as_deref().is_none_or(|v| v.trim().is_empty()) {
                        return Err(ConfigError::invalid(field, "required when chat.backend = \"remote\""));
                    }
                }
                let endpoint = self.chat.endpoint.as_deref().unwrap_or_default();
                if url::Url::parse(endpoint).is_err() {
                    return Err(ConfigError::invalid("chat.endpoint", format!("not a URL: {endpoint:?}")));
                }
            }
            ChatBackend::Mock => {
                if self.chat.mock.fallback == FallbackMode::Fixed && self.chat.mock.fixed_reply.is_none() {
                    return Err(ConfigError::invalid(
                        "chat.mock.fixed_reply",
                        "required when chat.mock.fallback = \"fixed\"",
                    ));
                }
                if let Some(r) = self.chat.mock.rules.iter().find(|r| r.contains.is_empty()) {
                    return Err(ConfigError::invalid("chat.mock.rules", format!("empty pattern for reply {:?}", r.reply)));
                }
            }
        }
        if self.collections.is_empty() {
            return Err(ConfigError::invalid("collections", "at least one collection is required"));
        }
        let mut paths: BTreeMap<&Path, &str> = BTreeMap::new();
        for (name, c) in &self.collections {
            let field = |f: &str| format!("collections.{name}.{f}");
            if name.is_empty() || !name.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '-' || ch == '_') {
                return Err(ConfigError::invalid(
                    format!("collections.{name}"),
                    "names may contain only ASCII letters, digits, '-' and '_'",
                ));
            }
            if c.store_path.as_os_str().is_empty() {
                return Err(ConfigError::invalid(field("store_path"), "must not be empty"));
            }
            if let Some(other) = paths.insert(&c.store_path, name) {
                return Err(ConfigError::invalid(
                    field("store_path"),
                    format!("same path as collection {other:?}"),
                ));
            }
            c.splitter.validate().map_err(|e| ConfigError::invalid(field("splitter"), e))?;
            c.embedder.validate().map_err(|e| ConfigError::invalid(field("embedder"), e))?;
            c.retrieval.validate().map_err(|e| ConfigError::invalid(field("retrieval"), e))?;
            c.budget.validate().map_err(|e| ConfigError::invalid(field("budget"), e))?;
            c.hnsw.validate().map_err(|e| ConfigError::invalid(field("hnsw"), e))?;
        }
        Ok(())
    }
}

/// Loads `config_path`, reading secrets from the process environment and
/// then from `env_file` when it exists.
pub fn load_config(config_path: &Path, env_file: Option<&Path>) -> Result<AppConfig, ConfigError> {
    load_config_with_env(config_path, env_file, &|name| std::env::var(name).ok())
}

/// [`load_config`] with an injectable process-environment lookup.
pub fn load_config_with_env(
    config_path: &Path,
    env_file: Option<&Path>,
    process_env: &dyn Fn(&str) -> Option<String>,
) -> Result<AppConfig, ConfigError> {
    let file_env = match env_file {
        Some(p) if p.exists() => {
            let text = read(p)?;
            parse_env_file(&text).map_err(|(line, message)| ConfigError::Parse {
                file: p.display().to_string(),
                line,
                message,
            })?
        }
        _ => BTreeMap::new(),
    };
    let text = read(config_path)?;
    let mut cfg = parse_config(&text).map_err(|(line, message)| ConfigError::Parse {
        file: config_path.display().to_string(),
        line,
        message,
    })?;
    let base = config_path.parent().unwrap_or_else(|| Path::new(""));
    for c in cfg.collections.values_mut() {
        if c.store_path.is_relative() && !c.store_path.as_os_str().is_empty() {
            c.store_path = base.join(&c.store_path);
        }
    }
    cfg.validate()?;
    for name in cfg.secret_names() {
        let value = process_env(&name)
            .or_else(|| file_env.get(&name).cloned())
            .filter(|v| !v.is_empty())
            .ok_or_else(|| ConfigError::MissingSecret(name.clone()))?;
        cfg.secrets.insert(name, Secret::new(value));
    }
    Ok(cfg)
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Parses config text, reporting failures as a 1-based line and message.
pub fn parse_config(text: &str) -> Result<AppConfig, (usize, String)> {
    toml::from_str(text).map_err(|e: toml::de::Error| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(1);
        (line, e.message().to_string())
    })
}

/// `KEY=VALUE` lines; `#` starts a comment line; keys and values are
/// trimmed. Error messages never include line content.
pub fn parse_env_file(text: &str) -> Result<BTreeMap<String, String>, (usize, String)> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err((i + 1, "expected KEY=VALUE".into()));
        };
        let key = key.trim();
        if key.is_empty() {
            return Err((i + 1, "empty key".into()));
        }
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}
