//! Request and response bodies.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rag_core::collection::{CollectionStats, IngestReport, IngestSource};
use rag_core::{Answer, ChatMessage};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl IngestRequest {
    /// Exactly one of `path`, `url` or `text` must be set. Returns the
    /// source and the metadata to attach to each loaded document.
    pub fn into_source(self) -> Result<(IngestSource, BTreeMap<String, String>), String> {
        let set = [self.path.is_some(), self.url.is_some(), self.text.is_some()]
            .iter()
            .filter(|b| **b)
            .count();
        if set != 1 {
            return Err(format!("exactly one of path, url or text is required (got {set})"));
        }
        Ok(match (self.path, self.url, self.text) {
            (Some(p), _, _) => (IngestSource::Path(PathBuf::from(p)), self.metadata),
            (_, Some(u), _) => (IngestSource::Url(u), self.metadata),
            (_, _, Some(text)) => (
                IngestSource::Text {
                    text,
                    metadata: self.metadata,
                },
                BTreeMap::new(),
            ),
            _ => unreachable!(),
        })
    }
}

/// `doc_id` names the first document loaded; a directory path can load
/// several. `chunk_count` covers all of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestResponse {
    pub doc_id: Option<String>,
    pub chunk_count: usize,
}

impl From<&IngestReport> for IngestResponse {
    fn from(r: &IngestReport) -> Self {
        Self {
            doc_id: r.documents.first().map(|d| d.doc_id.clone()),
            chunk_count: r.chunk_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collection: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multi_query: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub source: String,
    pub seq: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub answer: String,
    pub sources: Vec<SourceEntry>,
    pub prompt_tokens_est: usize,
    pub warnings: Vec<String>,
}

impl From<&Answer> for QueryResponse {
    fn from(a: &Answer) -> Self {
        Self {
            answer: a.text.clone(),
            sources: a
                .sources
                .iter()
                .map(|s| SourceEntry {
                    source: s.source.clone(),
                    seq: s.seq,
                    score: s.score,
                })
                .collect(),
            prompt_tokens_est: a.prompt_tokens_est,
            warnings: a.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HealthResponse {
    pub status: String,
    pub collections: Vec<CollectionStats>,
}
