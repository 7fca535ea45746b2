//! Binary store format, all integers little-endian:
//!
//! ```text
//! "RAGV"  u32 version(=1)  u32 dim  u64 count
//! count × record:
//!     u16 id_len, id bytes (UTF-8 chunk id)
//!     f32 × dim vector
//!     u32 meta_len, meta bytes (UTF-8 JSON: doc_id, seq, text, metadata)
//!     u64 insert_id
//! HNSW section:
//!     u32 m  u32 ef_construction  u32 ef_search  u64 seed
//!     u64 entry insert_id (u64::MAX when the graph is empty)
//!     count × node, in record order:
//!         u8 level
//!         (level + 1) × { u32 n, n × u64 neighbor insert_id }
//! ```
//!
//! Deleted records are left out and edges to them are dropped.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use super::hnsw::{GraphNode, HnswGraph, HnswParams};
use super::{Slot, StoreError, VectorRecord, VectorStore, FORMAT_MAGIC, FORMAT_VERSION};
use crate::chunker::Chunk;
use crate::embed::EmbeddingVector;

const NO_ENTRY: u64 = u64::MAX;

#[derive(Serialize, Deserialize)]
struct RecordMeta {
    doc_id: String,
    seq: usize,
    text: String,
    metadata: BTreeMap<String, String>,
}

fn format_err(msg: impl Into<String>) -> StoreError {
    StoreError::Format(msg.into())
}

fn u32_of(n: usize, what: &str) -> Result<u32, StoreError> {
    u32::try_from(n).map_err(|_| format_err(format!("{what} too large")))
}

pub(super) fn save(store: &VectorStore, path: &Path) -> Result<(), StoreError> {
    let graph = store.graph.read();
    let live: Vec<usize> = (0..store.slots.len()).filter(|&i| !store.slots[i].deleted).collect();
    let dim = store.dim.unwrap_or(0);

    let tmp = path.with_extension("ragv.tmp");
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(&tmp)?);
    w.write_all(FORMAT_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&u32_of(dim, "dimension")?.to_le_bytes())?;
    w.write_all(&(live.len() as u64).to_le_bytes())?;
    for &i in &live {
        let rec = &store.slots[i].record;
        let id = rec.chunk.id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| format_err("chunk id longer than 65535 bytes"))?;
        w.write_all(&id_len.to_le_bytes())?;
        w.write_all(id)?;
        for v in rec.vector.values() {
            w.write_all(&v.to_le_bytes())?;
        }
        let meta = serde_json::to_vec(&RecordMeta {
            doc_id: rec.chunk.doc_id.clone(),
            seq: rec.chunk.seq,
            text: rec.chunk.text.clone(),
            metadata: rec.chunk.metadata.clone(),
        })
        .map_err(|e| format_err(e.to_string()))?;
        w.write_all(&u32_of(meta.len(), "metadata")?.to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&rec.insert_id.to_le_bytes())?;
    }

    let p = &store.params;
    w.write_all(&u32_of(p.m, "m")?.to_le_bytes())?;
    w.write_all(&u32_of(p.ef_construction, "ef_construction")?.to_le_bytes())?;
    w.write_all(&u32_of(p.ef_search, "ef_search")?.to_le_bytes())?;
    w.write_all(&p.seed.to_le_bytes())?;

    let insert_id_of = |node: u32| store.slots[node as usize].record.insert_id;
    let is_live = |node: u32| !store.slots[node as usize].deleted;
    // A deleted entry point is replaced by the highest-level live node.
    let entry = match graph.entry {
        Some(e) if is_live(e) => Some(e),
        _ => live
            .iter()
            .map(|&i| i as u32)
            .max_by(|&a, &b| {
                graph.nodes[a as usize]
                    .level
                    .cmp(&graph.nodes[b as usize].level)
                    .then(b.cmp(&a))
            }),
    };
    w.write_all(&entry.map(insert_id_of).unwrap_or(NO_ENTRY).to_le_bytes())?;
    for &i in &live {
        let node = &graph.nodes[i];
        let level = u8::try_from(node.level).map_err(|_| format_err("level too large"))?;
        w.write_all(&[level])?;
        for links in &node.links {
            let kept: Vec<u64> = links.iter().copied().filter(|&n| is_live(n)).map(insert_id_of).collect();
            w.write_all(&u32_of(kept.len(), "neighbor list")?.to_le_bytes())?;
            for id in kept {
                w.write_all(&id.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], StoreError> {
        let mut buf = [0u8; N];
        self.0.read_exact(&mut buf).map_err(truncated)?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8, StoreError> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16, StoreError> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }
    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f32(&mut self) -> Result<f32, StoreError> {
        Ok(f32::from_le_bytes(self.bytes()?))
    }
    fn vec(&mut self, len: usize) -> Result<Vec<u8>, StoreError> {
        let mut buf = Vec::new();
        (&mut self.0).take(len as u64).read_to_end(&mut buf)?;
        if buf.len() != len {
            return Err(format_err("unexpected end of file"));
        }
        Ok(buf)
    }
}

fn truncated(e: std::io::Error) -> StoreError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        format_err("unexpected end of file")
    } else {
        StoreError::Io(e)
    }
}

pub(super) fn load(path: &Path) -> Result<VectorStore, StoreError> {
    let mut r = Reader(BufReader::new(File::open(path)?));
    let magic: [u8; 4] = r.bytes().map_err(|_| format_err("file too short for header"))?;
    if &magic != FORMAT_MAGIC {
        return Err(format_err(format!("bad magic {magic:?}")));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(StoreError::Version(version));
    }
    let dim = r.u32()? as usize;
    let count = r.u64()?;
    if count > 0 && dim == 0 {
        return Err(format_err("records present but dimension is 0"));
    }

    let mut slots = Vec::new();
    let mut units = Vec::new();
    let mut live = HashMap::new();
    let mut by_insert_id = HashMap::new();
    let mut next_insert_id = 0u64;
    for i in 0..count {
        let id_len = r.u16()? as usize;
        let id = String::from_utf8(r.vec(id_len)?).map_err(|_| format_err("chunk id is not UTF-8"))?;
        let values = (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
        let vector = EmbeddingVector::new(values).map_err(|e| format_err(format!("record {i}: {e}")))?;
        let meta_len = r.u32()? as usize;
        let meta: RecordMeta = serde_json::from_slice(&r.vec(meta_len)?)
            .map_err(|e| format_err(format!("record {i} metadata: {e}")))?;
        let insert_id = r.u64()?;
        if by_insert_id.insert(insert_id, slots.len() as u32).is_some() {
            return Err(format_err(format!("duplicate insert id {insert_id}")));
        }
        if live.insert(id.clone(), slots.len()).is_some() {
            return Err(format_err(format!("duplicate chunk id {id:?}")));
        }
        next_insert_id = next_insert_id.max(insert_id + 1);
        let norm_sq = vector.norm_sq();
        if norm_sq == 0.0 {
            return Err(format_err(format!("record {i} has a zero vector")));
        }
        let norm = norm_sq.sqrt();
        units.extend(vector.values().iter().map(|&x| (f64::from(x) / norm) as f32));
        slots.push(Slot {
            record: VectorRecord {
                chunk: Chunk {
                    id,
                    doc_id: meta.doc_id,
                    seq: meta.seq,
                    text: meta.text,
                    metadata: meta.metadata,
                },
                vector,
                insert_id,
            },
            norm_sq,
            deleted: false,
        });
    }

    let params = HnswParams {
        m: r.u32()? as usize,
        ef_construction: r.u32()? as usize,
        ef_search: r.u32()? as usize,
        seed: r.u64()?,
    };
    params.validate().map_err(format_err)?;
    let resolve = |id: u64| {
        by_insert_id
            .get(&id)
            .copied()
            .ok_or_else(|| format_err(format!("graph references unknown insert id {id}")))
    };
    let entry = match r.u64()? {
        NO_ENTRY => None,
        id => Some(resolve(id)?),
    };
    let mut nodes = Vec::with_capacity(slots.len());
    for _ in 0..slots.len() {
        let level = r.u8()? as usize;
        let mut links = Vec::with_capacity(level + 1);
        for _ in 0..=level {
            let n = r.u32()? as usize;
            let layer = (0..n).map(|_| resolve(r.u64()?)).collect::<Result<Vec<_>, _>>()?;
            links.push(layer);
        }
        nodes.push(GraphNode { level, links });
    }
    if entry.is_none() != nodes.is_empty() {
        return Err(format_err("graph entry point inconsistent with node count"));
    }
    for node in &nodes {
        for (layer, links) in node.links.iter().enumerate() {
            if links.iter().any(|&n| nodes[n as usize].level < layer) {
                return Err(format_err("graph edge points above a node's level"));
            }
        }
    }

    Ok(VectorStore {
        params,
        dim: (dim > 0).then_some(dim),
        slots,
        units,
        live,
        next_insert_id,
        graph: RwLock::new(HnswGraph { nodes, entry }),
    })
}
