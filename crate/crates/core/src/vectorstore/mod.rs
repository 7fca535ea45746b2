//! In-memory vector store with exact and HNSW search, re-ranking and a
//! single-file on-disk format.
//!
//! Each record keeps its original vector (used for all reported scores) and
//! a unit-normalized copy (used to navigate the HNSW graph). The graph is
//! brought up to date lazily, on the first approximate search or save after
//! an upsert, so bulk loads do not pay for graph construction until it is
//! needed. Scores reported by every search path come from the same exact
//! cosine routine, so results are ordered identically by score descending,
//! then by `insert_id` ascending.

mod hnsw;
mod persist;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::Chunk;
use crate::embed::{cosine_with_norms, EmbeddingVector};

pub use hnsw::HnswParams;
use hnsw::{HnswGraph, Vectors};

pub const FORMAT_MAGIC: &[u8; 4] = b"RAGV";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("dimension mismatch: store has {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("the store is empty")]
    EmptyStore,
    #[error("zero vector cannot be indexed or queried")]
    ZeroVector,
    #[error("k must be >= 1")]
    InvalidK,
    #[error("candidate chunk {0:?} is no longer in the store")]
    StaleCandidate(String),
    #[error("invalid HNSW parameters: {0}")]
    InvalidParams(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a vector store file: {0}")]
    Format(String),
    #[error("unsupported vector store format version {0}")]
    Version(u32),
}

/// A stored chunk with its vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorRecord {
    pub chunk: Chunk,
    pub vector: EmbeddingVector,
    pub insert_id: u64,
}

/// A search hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk: Chunk,
    pub score: f64,
    pub rank: usize,
    pub insert_id: u64,
}

/// Score descending, then insert id ascending.
pub fn result_order(a: &ScoredChunk, b: &ScoredChunk) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.insert_id.cmp(&b.insert_id))
}

/// Sorts into result order and renumbers ranks.
pub fn sort_and_rank(results: &mut [ScoredChunk]) {
    results.sort_by(result_order);
    for (i, r) in results.iter_mut().enumerate() {
        r.rank = i;
    }
}

#[derive(Debug, Clone)]
struct Slot {
    record: VectorRecord,
    norm_sq: f64,
    deleted: bool,
}

#[derive(Debug)]
pub struct VectorStore {
    params: HnswParams,
    dim: Option<usize>,
    slots: Vec<Slot>,
    /// Unit-normalized copies, `dim` floats per slot.
    units: Vec<f32>,
    live: HashMap<String, usize>,
    next_insert_id: u64,
    graph: RwLock<HnswGraph>,
}

impl Default for VectorStore {
    fn default() -> Self {
        Self::new(HnswParams::default()).expect("default params are valid")
    }
}

impl VectorStore {
    pub fn new(params: HnswParams) -> Result<Self, StoreError> {
        params.validate().map_err(StoreError::InvalidParams)?;
        Ok(Self {
            params,
            dim: None,
            slots: Vec::new(),
            units: Vec::new(),
            live: HashMap::new(),
            next_insert_id: 0,
            graph: RwLock::new(HnswGraph::default()),
        })
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    /// Dimension fixed by the first upsert.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    /// Number of live records.
    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn get(&self, chunk_id: &str) -> Option<&VectorRecord> {
        self.live.get(chunk_id).map(|&i| &self.slots[i].record)
    }

    pub fn contains(&self, chunk_id: &str) -> bool {
        self.live.contains_key(chunk_id)
    }

    /// Live records in insertion order.
    pub fn records(&self) -> impl Iterator<Item = &VectorRecord> {
        self.slots.iter().filter(|s| !s.deleted).map(|s| &s.record)
    }

    /// Inserts or replaces records. A chunk id that is already present is
    /// replaced and receives a new insert id. Either every record is stored
    /// or, on error, none is.
    pub fn upsert(&mut self, records: Vec<(Chunk, EmbeddingVector)>) -> Result<Vec<u64>, StoreError> {
        self.dim = self.check_records(&records)?;
        Ok(self.insert_unchecked(records))
    }

    /// Removes every chunk of `doc_ids`, then upserts `records`. Nothing
    /// changes if any record is rejected.
    pub fn replace_documents(
        &mut self,
        doc_ids: &[&str],
        records: Vec<(Chunk, EmbeddingVector)>,
    ) -> Result<Vec<u64>, StoreError> {
        let dim = self.check_records(&records)?;
        for id in doc_ids {
            self.delete_document(id);
        }
        self.dim = dim;
        Ok(self.insert_unchecked(records))
    }

    fn check_records(&self, records: &[(Chunk, EmbeddingVector)]) -> Result<Option<usize>, StoreError> {
        let mut dim = self.dim;
        for (_, v) in records {
            let expected = *dim.get_or_insert(v.dim());
            if v.dim() != expected {
                return Err(StoreError::DimensionMismatch {
                    expected,
                    actual: v.dim(),
                });
            }
            if v.norm_sq() == 0.0 {
                return Err(StoreError::ZeroVector);
            }
        }
        Ok(dim)
    }

    fn insert_unchecked(&mut self, records: Vec<(Chunk, EmbeddingVector)>) -> Vec<u64> {
        let mut ids = Vec::with_capacity(records.len());
        for (chunk, vector) in records {
            if let Some(old) = self.live.remove(&chunk.id) {
                self.slots[old].deleted = true;
            }
            let insert_id = self.next_insert_id;
            self.next_insert_id += 1;
            let norm_sq = vector.norm_sq();
            let norm = norm_sq.sqrt();
            self.units.extend(vector.values().iter().map(|&x| (f64::from(x) / norm) as f32));
            self.live.insert(chunk.id.clone(), self.slots.len());
            self.slots.push(Slot {
                record: VectorRecord {
                    chunk,
                    vector,
                    insert_id,
                },
                norm_sq,
                deleted: false,
            });
            ids.push(insert_id);
        }
        ids
    }

    /// Tombstones one chunk. Returns whether it was present.
    pub fn delete(&mut self, chunk_id: &str) -> bool {
        match self.live.remove(chunk_id) {
            Some(i) => {
                self.slots[i].deleted = true;
                true
            }
            None => false,
        }
    }

    /// Tombstones every chunk of a document; returns how many were removed.
    pub fn delete_document(&mut self, doc_id: &str) -> usize {
        let ids: Vec<String> = self
            .records()
            .filter(|r| r.chunk.doc_id == doc_id)
            .map(|r| r.chunk.id.clone())
            .collect();
        ids.iter().filter(|id| self.delete(id)).count()
    }

    fn check_query(&self, query: &EmbeddingVector, k: usize) -> Result<f64, StoreError> {
        if self.is_empty() {
            return Err(StoreError::EmptyStore);
        }
        if k == 0 {
            return Err(StoreError::InvalidK);
        }
        let dim = self.dim.unwrap_or(0);
        if query.dim() != dim {
            return Err(StoreError::DimensionMismatch {
                expected: dim,
                actual: query.dim(),
            });
        }
        let qn = query.norm_sq();
        if qn == 0.0 {
            return Err(StoreError::ZeroVector);
        }
        Ok(qn)
    }

    fn score_slot(&self, slot: usize, query: &EmbeddingVector, query_norm_sq: f64) -> ScoredChunk {
        let s = &self.slots[slot];
        ScoredChunk {
            chunk: s.record.chunk.clone(),
            score: cosine_with_norms(query.values(), s.record.vector.values(), query_norm_sq, s.norm_sq),
            rank: 0,
            insert_id: s.record.insert_id,
        }
    }

    /// True top-k by cosine similarity over every live record.
    pub fn search_exact(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<ScoredChunk>, StoreError> {
        let qn = self.check_query(query, k)?;
        let mut scored: Vec<(f64, u64, usize)> = self
            .slots
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.deleted)
            .map(|(i, s)| {
                let score = cosine_with_norms(query.values(), s.record.vector.values(), qn, s.norm_sq);
                (score, s.record.insert_id, i)
            })
            .collect();
        let order = |a: &(f64, u64, usize), b: &(f64, u64, usize)| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1));
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(rank, (score, insert_id, slot))| ScoredChunk {
                chunk: self.slots[slot].record.chunk.clone(),
                score,
                rank,
                insert_id,
            })
            .collect())
    }

    /// Brings the HNSW graph up to date with every slot.
    pub fn build_index(&self) {
        if self.graph.read().len() == self.slots.len() {
            return;
        }
        let mut graph = self.graph.write();
        let dim = self.dim.unwrap_or(0);
        let vecs = Vectors { data: &self.units, dim };
        while graph.len() < self.slots.len() {
            let insert_id = self.slots[graph.len()].record.insert_id;
            graph.insert(&vecs, self.params.level_for(insert_id), &self.params);
        }
    }

    /// Approximate top-k through the HNSW graph, with a candidate list of
    /// `max(ef_search, k)`. Returned scores are exact cosine similarities.
    pub fn search_hnsw(
        &self,
        query: &EmbeddingVector,
        k: usize,
        ef_search: usize,
    ) -> Result<Vec<ScoredChunk>, StoreError> {
        let qn = self.check_query(query, k)?;
        self.build_index();
        let graph = self.graph.read();
        let dim = self.dim.unwrap_or(0);
        let vecs = Vectors { data: &self.units, dim };
        let qnorm = qn.sqrt();
        let unit_q: Vec<f32> = query.values().iter().map(|&x| (f64::from(x) / qnorm) as f32).collect();
        let accept = |i: u32| !self.slots[i as usize].deleted;
        let want = k.min(self.len());
        let mut ef = ef_search.max(k);
        let mut found = graph.search(&vecs, &unit_q, ef, &accept);
        // Tombstones can starve the candidate list; widen until k live hits.
        while found.len() < want && ef < self.slots.len() {
            ef = (ef * 2).min(self.slots.len());
            found = graph.search(&vecs, &unit_q, ef, &accept);
        }
        let mut results: Vec<ScoredChunk> = found
            .iter()
            .map(|c| self.score_slot(c.node as usize, query, qn))
            .collect();
        sort_and_rank(&mut results);
        results.truncate(k);
        Ok(results)
    }

    /// Recomputes exact cosine for each candidate from the stored vectors
    /// and re-sorts.
    pub fn rerank(&self, candidates: &[ScoredChunk], query: &EmbeddingVector) -> Result<Vec<ScoredChunk>, StoreError> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let qn = self.check_query(query, 1)?;
        let mut out = candidates
            .iter()
            .map(|c| {
                self.live
                    .get(&c.chunk.id)
                    .map(|&slot| self.score_slot(slot, query, qn))
                    .ok_or_else(|| StoreError::StaleCandidate(c.chunk.id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        sort_and_rank(&mut out);
        Ok(out)
    }

    /// Writes the store (tombstones compacted away) to `path` atomically.
    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        self.build_index();
        persist::save(self, path)
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        persist::load(path)
    }
}
