//! A named, persisted collection: one store, one embedder, one config.
//!
//! Reads take a shared lock on the store. Ingest is serialized per
//! collection; loading, splitting and embedding happen before the store is
//! locked, so queries wait only while records are swapped in. The file is
//! saved before ingest returns.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock, RwLockWriteGuard};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::chain::{Answer, ChainError, QaChain};
use crate::chunker::{split, Chunk, ChunkError};
use crate::config::CollectionConfig;
use crate::embed::{EmbedError, Embedder};
use crate::ingest::{fetch_web, Document, FetchPolicy, IngestError, LoaderRegistry};
use crate::llm::{ChatClient, ChatMessage, ChatParams};
use crate::prompt::PromptTemplate;
use crate::retrieve::RetrievalConfig;
use crate::vectorstore::{StoreError, VectorStore};

#[derive(Debug, Error)]
pub enum CollectionError {
    #[error(transparent)]
    Load(#[from] IngestError),
    #[error(transparent)]
    Split(#[from] ChunkError),
    #[error("embedding failed: {0}")]
    Embed(#[from] EmbedError),
    #[error("vector store: {0}")]
    Store(#[from] StoreError),
}

/// What to ingest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestSource {
    Path(PathBuf),
    Url(String),
    Text {
        text: String,
        #[serde(default)]
        metadata: BTreeMap<String, String>,
    },
}

impl IngestSource {
    pub fn describe(&self) -> String {
        match self {
            IngestSource::Path(p) => p.display().to_string(),
            IngestSource::Url(u) => u.clone(),
            IngestSource::Text { metadata, .. } => metadata
                .get("source")
                .cloned()
                .unwrap_or_else(|| "inline text".to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentReport {
    pub doc_id: String,
    pub source: String,
    pub chunk_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub documents: Vec<DocumentReport>,
}

impl IngestReport {
    pub fn chunk_count(&self) -> usize {
        self.documents.iter().map(|d| d.chunk_count).sum()
    }
}

/// Per-request retrieval overrides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueryOptions {
    pub k: Option<usize>,
    pub multi_query: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollectionStats {
    pub name: String,
    pub chunk_count: usize,
    pub dim: Option<usize>,
}

pub struct Collection {
    name: String,
    config: CollectionConfig,
    embedder: Arc<dyn Embedder>,
    store: RwLock<VectorStore>,
    writer: Mutex<()>,
    loaders: LoaderRegistry,
    fetch_policy: FetchPolicy,
}

impl std::fmt::Debug for Collection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Collection")
            .field("name", &self.name)
            .field("store_path", &self.config.store_path)
            .finish_non_exhaustive()
    }
}

impl Collection {
    /// Opens the collection, loading its store file when it exists.
    pub fn open(
        name: impl Into<String>,
        config: CollectionConfig,
        embedder: Arc<dyn Embedder>,
        fetch_policy: FetchPolicy,
    ) -> Result<Self, StoreError> {
        let store = if config.store_path.exists() {
            VectorStore::load(&config.store_path)?
        } else {
            VectorStore::new(config.hnsw)?
        };
        Ok(Self {
            name: name.into(),
            config,
            embedder,
            store: RwLock::new(store),
            writer: Mutex::new(()),
            loaders: LoaderRegistry::default(),
            fetch_policy,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn config(&self) -> &CollectionConfig {
        &self.config
    }

    pub fn store_path(&self) -> &Path {
        &self.config.store_path
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn stats(&self) -> CollectionStats {
        let store = self.store.read();
        CollectionStats {
            name: self.name.clone(),
            chunk_count: store.len(),
            dim: store.dim(),
        }
    }

    /// Runs `f` with shared access to the store.
    pub fn with_store<R>(&self, f: impl FnOnce(&VectorStore) -> R) -> R {
        f(&self.store.read())
    }

    fn load(&self, source: &IngestSource) -> Result<Vec<Document>, IngestError> {
        match source {
            IngestSource::Path(p) => self.loaders.load(p),
            IngestSource::Url(u) => Ok(vec![fetch_web(u, &self.fetch_policy)?]),
            IngestSource::Text { text, metadata } => {
                let mut doc = Document::from_inline(text.clone(), metadata.get("source").cloned());
                for (k, v) in metadata {
                    doc.metadata.entry(k.clone()).or_insert_with(|| v.clone());
                }
                Ok(vec![doc])
            }
        }
    }

    /// Loads, splits, embeds and stores `source`, replacing any chunks
    /// previously stored for the same documents, then saves the store.
    pub fn ingest(&self, source: &IngestSource) -> Result<IngestReport, CollectionError> {
        self.ingest_with_metadata(source, &BTreeMap::new())
    }

    /// As [`Collection::ingest`], adding `extra` to each loaded document's
    /// metadata. Keys set by the loader are kept.
    pub fn ingest_with_metadata(
        &self,
        source: &IngestSource,
        extra: &BTreeMap<String, String>,
    ) -> Result<IngestReport, CollectionError> {
        let _writer = self.writer.lock();
        let mut docs = self.load(source)?;
        for doc in &mut docs {
            for (k, v) in extra {
                doc.metadata.entry(k.clone()).or_insert_with(|| v.clone());
            }
        }
        let mut per_doc: Vec<(Document, Vec<Chunk>)> = Vec::with_capacity(docs.len());
        for doc in docs {
            let chunks = split(&doc, &self.config.splitter)?;
            per_doc.push((doc, chunks));
        }
        let texts: Vec<String> = per_doc
            .iter()
            .flat_map(|(_, cs)| cs.iter().map(|c| c.text.clone()))
            .collect();
        let mut vectors = self.embedder.embed_texts(&texts)?.into_iter();
        let mut records = Vec::with_capacity(texts.len());
        let mut report = IngestReport { documents: Vec::new() };
        for (doc, chunks) in per_doc {
            report.documents.push(DocumentReport {
                doc_id: doc.id.clone(),
                source: doc.source().to_string(),
                chunk_count: chunks.len(),
            });
            for c in chunks {
                let v = vectors
                    .next()
                    .ok_or_else(|| EmbedError::InvalidVector("embedder returned too few vectors".into()))?;
                records.push((c, v));
            }
        }

        let doc_ids: Vec<&str> = report.documents.iter().map(|d| d.doc_id.as_str()).collect();
        let mut store = self.store.write();
        store.replace_documents(&doc_ids, records)?;
        let store = RwLockWriteGuard::downgrade(store);
        store.save(&self.config.store_path)?;
        info!(
            collection = %self.name,
            documents = report.documents.len(),
            chunks = report.chunk_count(),
            "ingested {}",
            source.describe()
        );
        Ok(report)
    }

    /// Answers `question` against this collection. `history` may be empty.
    pub fn answer(
        &self,
        question: &str,
        history: &[ChatMessage],
        opts: QueryOptions,
        llm: &dyn ChatClient,
        params: &ChatParams,
        template: &PromptTemplate,
    ) -> Result<Answer, ChainError> {
        let cfg = self.retrieval_config(opts);
        let store = self.store.read();
        let chain = QaChain::new(&store, self.embedder.as_ref(), llm, params);
        chain.chat_session(history, question, &cfg, &self.config.budget, template)
    }

    pub fn retrieval_config(&self, opts: QueryOptions) -> RetrievalConfig {
        let mut cfg = self.config.retrieval.clone();
        if let Some(k) = opts.k {
            cfg.k = k;
        }
        if let Some(m) = opts.multi_query {
            cfg.multi_query = m;
        }
        cfg
    }
}
