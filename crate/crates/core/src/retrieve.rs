//! Question-to-chunks retrieval: plain top-k and LLM-assisted multi-query.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::config::defaults;
use crate::embed::{EmbedError, Embedder, EmbeddingVector};
use crate::llm::{ChatClient, ChatMessage, ChatParams, LlmError};
use crate::vectorstore::{sort_and_rank, ScoredChunk, StoreError, VectorStore};

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error("question must not be blank")]
    BlankQuestion,
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    #[default]
    Exact,
    Hnsw,
}

impl std::fmt::Display for SearchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SearchMode::Exact => "exact",
            SearchMode::Hnsw => "hnsw",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
    pub mode: SearchMode,
    /// Unset means on for hnsw and off for exact.
    pub use_rerank: Option<bool>,
    pub multi_query: bool,
    pub n_variants: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: defaults::K,
            mode: SearchMode::default(),
            use_rerank: None,
            multi_query: false,
            n_variants: defaults::N_VARIANTS,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrieveError> {
        if self.k == 0 {
            return Err(RetrieveError::InvalidConfig("k must be >= 1".into()));
        }
        Ok(())
    }

    pub fn rerank_enabled(&self) -> bool {
        self.use_rerank.unwrap_or(self.mode == SearchMode::Hnsw)
    }
}

/// Ranked chunks plus notices about anything skipped along the way.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Retrieved {
    pub chunks: Vec<ScoredChunk>,
    pub warnings: Vec<String>,
}

/// Instruction sent to the chat model to obtain query variants.
pub const VARIANT_TEMPLATE: &str = "You help a document search system find relevant passages. \
Rewrite the user question below in {n} different ways, keeping its meaning but varying the wording. \
Return exactly {n} alternative phrasings, one per line, and nothing else.\n\nQuestion: {question}";

pub fn variant_prompt(question: &str, n: usize) -> String {
    VARIANT_TEMPLATE
        .replace("{n}", &n.to_string())
        .replacen("{question}", question, 1)
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:\d+\s*[.)]|[-*•])\s*").expect("valid regex"))
}

/// One variant per non-empty line, enumeration markers removed, at most `n`.
pub fn parse_variants(output: &str, n: usize) -> Vec<String> {
    output
        .lines()
        .map(|l| marker_re().replace(l.trim(), "").trim().to_string())
        .filter(|l| !l.is_empty())
        .take(n)
        .collect()
}

/// Asks `llm` for `n` rephrasings of `question`.
pub fn generate_query_variants(
    question: &str,
    n: usize,
    llm: &dyn ChatClient,
    params: &ChatParams,
) -> Result<Vec<String>, LlmError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let output = llm.chat(&[ChatMessage::user(variant_prompt(question, n))], params)?;
    Ok(parse_variants(&output, n))
}

/// Retrieval over one store with one embedder.
#[derive(Clone, Copy)]
pub struct Retriever<'a> {
    pub store: &'a VectorStore,
    pub embedder: &'a dyn Embedder,
}

impl<'a> Retriever<'a> {
    pub fn new(store: &'a VectorStore, embedder: &'a dyn Embedder) -> Self {
        Self { store, embedder }
    }

    /// Top-k chunks for `question`, best first.
    pub fn retrieve(&self, question: &str, cfg: &RetrievalConfig) -> Result<Vec<ScoredChunk>, RetrieveError> {
        cfg.validate()?;
        if question.trim().is_empty() {
            return Err(RetrieveError::BlankQuestion);
        }
        if self.store.is_empty() {
            return Err(StoreError::EmptyStore.into());
        }
        let q = self.embedder.embed_one(question)?;
        self.search(&q, cfg)
    }

    fn search(&self, q: &EmbeddingVector, cfg: &RetrievalConfig) -> Result<Vec<ScoredChunk>, RetrieveError> {
        let hits = match cfg.mode {
            SearchMode::Exact => self.store.search_exact(q, cfg.k)?,
            SearchMode::Hnsw => self.store.search_hnsw(q, cfg.k, self.store.params().ef_search)?,
        };
        if cfg.rerank_enabled() {
            Ok(self.store.rerank(&hits, q)?)
        } else {
            Ok(hits)
        }
    }

    /// Retrieves for the question and each of `cfg.n_variants` generated
    /// variants, then merges by chunk id keeping each chunk's best score.
    /// The merged list is not truncated to `k`. Failures for the original
    /// question are errors; failures for variants become warnings.
    pub fn multi_query_retrieve(
        &self,
        question: &str,
        cfg: &RetrievalConfig,
        llm: &dyn ChatClient,
        params: &ChatParams,
    ) -> Result<Retrieved, RetrieveError> {
        let base = self.retrieve(question, cfg)?;
        let mut warnings = Vec::new();
        let variants = match generate_query_variants(question, cfg.n_variants, llm, params) {
            Ok(v) => v,
            Err(e) => {
                warn!(error = %e, "query variant generation failed");
                warnings.push(format!("query variant generation failed: {e}"));
                Vec::new()
            }
        };
        let per_variant: Vec<Result<Vec<ScoredChunk>, RetrieveError>> = std::thread::scope(|s| {
            let handles: Vec<_> = variants
                .iter()
                .map(|v| s.spawn(move || self.retrieve(v, cfg)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("variant retrieval panicked"))
                .collect()
        });
        let mut lists = vec![base];
        for (variant, result) in variants.iter().zip(per_variant) {
            match result {
                Ok(hits) => lists.push(hits),
                Err(e) => {
                    warn!(error = %e, "variant retrieval skipped");
                    warnings.push(format!("variant {variant:?} skipped: {e}"));
                }
            }
        }
        Ok(Retrieved {
            chunks: union_best(lists),
            warnings,
        })
    }
}

/// Merges result lists by chunk id keeping the highest score, re-sorted and
/// re-ranked.
pub fn union_best(lists: Vec<Vec<ScoredChunk>>) -> Vec<ScoredChunk> {
    let mut best: HashMap<String, ScoredChunk> = HashMap::new();
    for hit in lists.into_iter().flatten() {
        match best.get_mut(&hit.chunk.id) {
            Some(existing) if existing.score >= hit.score => {}
            Some(existing) => *existing = hit,
            None => {
                best.insert(hit.chunk.id.clone(), hit);
            }
        }
    }
    let mut merged: Vec<ScoredChunk> = best.into_values().collect();
    sort_and_rank(&mut merged);
    merged
}
