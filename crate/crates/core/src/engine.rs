//! Wires an [`AppConfig`] into live collections and a chat backend.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::chain::{Answer, ChainError};
use crate::collection::{Collection, CollectionError, CollectionStats, IngestReport, IngestSource, QueryOptions};
use crate::config::{AppConfig, ChatBackend, ConfigError};
use crate::embed::{EmbedError, Embedder, EmbedderConfig, EmbedderKind, HashEmbedder, RemoteEmbedder};
use crate::ingest::FetchPolicy;
use crate::llm::{mock_script, ChatClient, ChatMessage, ChatParams, LlmError, RemoteChatClient};
use crate::prompt::PromptTemplate;
use crate::vectorstore::StoreError;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("collection {name}: {source}")]
    Embedder { name: String, source: EmbedError },
    #[error("chat backend: {0}")]
    Chat(#[from] LlmError),
    #[error("collection {name}: cannot open store: {source}")]
    Store { name: String, source: StoreError },
}

#[derive(Debug, Error)]
pub enum EngineCallError {
    #[error("unknown collection {0:?}")]
    UnknownCollection(String),
    #[error(transparent)]
    Ingest(#[from] CollectionError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

pub struct Engine {
    collections: BTreeMap<String, Arc<Collection>>,
    llm: Arc<dyn ChatClient>,
    chat_params: ChatParams,
    template: PromptTemplate,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("collections", &self.collections.keys().collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

fn build_embedder(name: &str, cfg: &EmbedderConfig, app: &AppConfig) -> Result<Arc<dyn Embedder>, EngineError> {
    let wrap = |source| EngineError::Embedder {
        name: name.to_string(),
        source,
    };
    Ok(match cfg.kind {
        EmbedderKind::LocalHash => Arc::new(HashEmbedder::new(cfg.dim, cfg.ngram_range).map_err(wrap)?),
        EmbedderKind::Remote => {
            let key_name = cfg.api_key_ref.as_deref().unwrap_or_default();
            let key = app
                .secrets
                .get(key_name)
                .cloned()
                .ok_or_else(|| ConfigError::MissingSecret(key_name.to_string()))?;
            Arc::new(RemoteEmbedder::new(cfg, key).map_err(wrap)?)
        }
    })
}

fn build_chat(app: &AppConfig) -> Result<Arc<dyn ChatClient>, EngineError> {
    Ok(match app.chat.backend {
        ChatBackend::Mock => Arc::new(mock_script(app.chat.mock.rules(), app.chat.mock.fallback())),
        ChatBackend::Remote => {
            let key_name = app.chat.api_key_ref.as_deref().unwrap_or_default();
            let key = app
                .secrets
                .get(key_name)
                .cloned()
                .ok_or_else(|| ConfigError::MissingSecret(key_name.to_string()))?;
            Arc::new(RemoteChatClient::new(app.chat.endpoint.as_deref().unwrap_or_default(), key)?)
        }
    })
}

impl Engine {
    /// Opens every configured collection and builds the chat backend.
    pub fn from_config(app: &AppConfig) -> Result<Self, EngineError> {
        app.validate()?;
        let fetch_policy = FetchPolicy {
            allowed_hosts: app.service.fetch_allowlist.clone(),
            timeout: Duration::from_secs(app.service.fetch_timeout_s),
            ..FetchPolicy::default()
        };
        let mut collections = BTreeMap::new();
        for (name, cfg) in &app.collections {
            let embedder = build_embedder(name, &cfg.embedder, app)?;
            let c = Collection::open(name.clone(), cfg.clone(), embedder, fetch_policy.clone()).map_err(|source| {
                EngineError::Store {
                    name: name.clone(),
                    source,
                }
            })?;
            collections.insert(name.clone(), Arc::new(c));
        }
        Ok(Self {
            collections,
            llm: build_chat(app)?,
            chat_params: app.chat.params(),
            template: PromptTemplate::qa(),
        })
    }

    /// Replaces the chat backend, e.g. with a scripted mock in tests.
    pub fn with_chat_client(mut self, llm: Arc<dyn ChatClient>) -> Self {
        self.llm = llm;
        self
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }

    pub fn collection(&self, name: &str) -> Result<&Arc<Collection>, EngineCallError> {
        self.collections
            .get(name)
            .ok_or_else(|| EngineCallError::UnknownCollection(name.to_string()))
    }

    pub fn collection_names(&self) -> impl Iterator<Item = &str> {
        self.collections.keys().map(String::as_str)
    }

    pub fn stats(&self) -> Vec<CollectionStats> {
        self.collections.values().map(|c| c.stats()).collect()
    }

    pub fn chat_params(&self) -> &ChatParams {
        &self.chat_params
    }

    pub fn chat_client(&self) -> &dyn ChatClient {
        self.llm.as_ref()
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    pub fn ingest(&self, collection: &str, source: &IngestSource) -> Result<IngestReport, EngineCallError> {
        Ok(self.collection(collection)?.ingest(source)?)
    }

    pub fn ingest_with_metadata(
        &self,
        collection: &str,
        source: &IngestSource,
        extra: &BTreeMap<String, String>,
    ) -> Result<IngestReport, EngineCallError> {
        Ok(self.collection(collection)?.ingest_with_metadata(source, extra)?)
    }

    pub fn query(
        &self,
        collection: &str,
        question: &str,
        history: &[ChatMessage],
        opts: QueryOptions,
    ) -> Result<Answer, EngineCallError> {
        let c = self.collection(collection)?;
        Ok(c.answer(question, history, opts, self.llm.as_ref(), &self.chat_params, &self.template)?)
    }
}
