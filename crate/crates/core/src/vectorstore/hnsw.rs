//! Hierarchical navigable small-world graph over unit-normalized vectors.
//!
//! Node `i` of the graph is slot `i` of the owning store. Distance is
//! `1 - dot` on the normalized copies, which orders candidates exactly like
//! cosine similarity. Deleted slots stay in the graph as routing nodes and
//! are filtered out of results.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::defaults;

/// Levels above this are never assigned.
const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HnswParams {
    /// Neighbors per node above layer 0; layer 0 keeps `2 * m`.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: defaults::HNSW_M,
            ef_construction: defaults::HNSW_EF_CONSTRUCTION,
            ef_search: defaults::HNSW_EF_SEARCH,
            seed: defaults::HNSW_SEED,
        }
    }
}

impl HnswParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.m < 2 {
            return Err(format!("m must be >= 2, got {}", self.m));
        }
        if self.ef_construction < self.m {
            return Err(format!(
                "ef_construction ({}) must be >= m ({})",
                self.ef_construction, self.m
            ));
        }
        if self.ef_search < 1 {
            return Err("ef_search must be >= 1".into());
        }
        Ok(())
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.m
        } else {
            self.m
        }
    }

    /// Geometric level with multiplier `1/ln(m)`, drawn from an RNG seeded by
    /// `(seed, insert_id)` so levels do not depend on insertion history.
    pub fn level_for(&self, insert_id: u64) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ insert_id.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let u: f64 = 1.0 - rng.gen::<f64>();
        let ml = 1.0 / (self.m as f64).ln();
        ((-u.ln() * ml).floor() as usize).min(MAX_LEVEL)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Candidate {
    pub dist: f32,
    pub node: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then_with(|| self.node.cmp(&other.node))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct GraphNode {
    pub level: usize,
    /// `links[layer]` for every layer `0..=level`.
    pub links: Vec<Vec<u32>>,
}

/// Flat storage of unit vectors, `dim` floats per node.
pub(crate) struct Vectors<'a> {
    pub data: &'a [f32],
    pub dim: usize,
}

impl Vectors<'_> {
    fn get(&self, i: u32) -> &[f32] {
        let start = i as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    fn dist(&self, q: &[f32], i: u32) -> f32 {
        1.0 - dot_f32(q, self.get(i))
    }
}

fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        for l in 0..8 {
            acc[l] += a[c * 8 + l] * b[c * 8 + l];
        }
    }
    let mut sum: f32 = acc.iter().sum();
    for i in chunks * 8..a.len() {
        sum += a[i] * b[i];
    }
    sum
}

struct Visited(Vec<u64>);

impl Visited {
    fn new(n: usize) -> Self {
        Self(vec![0; n.div_ceil(64)])
    }

    /// Marks `i`; returns true if it was not yet marked.
    fn insert(&mut self, i: u32) -> bool {
        let (w, b) = (i as usize / 64, i as usize % 64);
        let fresh = self.0[w] & (1 << b) == 0;
        self.0[w] |= 1 << b;
        fresh
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct HnswGraph {
    pub nodes: Vec<GraphNode>,
    pub entry: Option<u32>,
}

impl HnswGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    fn top_level(&self) -> usize {
        self.entry.map(|e| self.nodes[e as usize].level).unwrap_or(0)
    }

    /// Adds the next node (index `self.len()`) to the graph.
    pub fn insert(&mut self, vecs: &Vectors<'_>, level: usize, params: &HnswParams) {
        let idx = self.nodes.len() as u32;
        self.nodes.push(GraphNode {
            level,
            links: vec![Vec::new(); level + 1],
        });
        let Some(entry) = self.entry else {
            self.entry = Some(idx);
            return;
        };
        let q = vecs.get(idx);
        let top = self.top_level();
        let mut ep = Candidate {
            dist: vecs.dist(q, entry),
            node: entry,
        };
        for layer in (level + 1..=top).rev() {
            ep = self.greedy_closest(vecs, q, ep, layer);
        }
        let mut eps = vec![ep];
        for layer in (0..=level.min(top)).rev() {
            let found = self.search_layer(vecs, q, &eps, params.ef_construction, layer, &|_| true);
            let selected = select_neighbors(vecs, &found, params.max_links(layer));
            for &n in &selected {
                let links = &mut self.nodes[n as usize].links[layer];
                links.push(idx);
                if links.len() > params.max_links(layer) {
                    let base = vecs.get(n);
                    let mut cands: Vec<Candidate> = links
                        .iter()
                        .map(|&c| Candidate {
                            dist: vecs.dist(base, c),
                            node: c,
                        })
                        .collect();
                    cands.sort();
                    *links = select_neighbors(vecs, &cands, params.max_links(layer));
                }
            }
            self.nodes[idx as usize].links[layer] = selected;
            eps = found;
        }
        if level > top {
            self.entry = Some(idx);
        }
    }

    fn greedy_closest(&self, vecs: &Vectors<'_>, q: &[f32], mut best: Candidate, layer: usize) -> Candidate {
        loop {
            let mut improved = false;
            for &n in &self.nodes[best.node as usize].links[layer] {
                let c = Candidate {
                    dist: vecs.dist(q, n),
                    node: n,
                };
                if c < best {
                    best = c;
                    improved = true;
                }
            }
            if !improved {
                return best;
            }
        }
    }

    /// Best-first search of one layer. Nodes rejected by `accept` are
    /// traversed but never returned. Result is sorted nearest first.
    fn search_layer(
        &self,
        vecs: &Vectors<'_>,
        q: &[f32],
        entry_points: &[Candidate],
        ef: usize,
        layer: usize,
        accept: &dyn Fn(u32) -> bool,
    ) -> Vec<Candidate> {
        let mut visited = Visited::new(self.nodes.len());
        let mut frontier: BinaryHeap<Reverse<Candidate>> = BinaryHeap::new();
        let mut best: BinaryHeap<Candidate> = BinaryHeap::new();
        for &ep in entry_points {
            if visited.insert(ep.node) {
                frontier.push(Reverse(ep));
                if accept(ep.node) {
                    best.push(ep);
                }
            }
        }
        while let Some(Reverse(current)) = frontier.pop() {
            if best.len() >= ef && best.peek().is_some_and(|w| current.dist > w.dist) {
                break;
            }
            for &n in &self.nodes[current.node as usize].links[layer] {
                if !visited.insert(n) {
                    continue;
                }
                let c = Candidate {
                    dist: vecs.dist(q, n),
                    node: n,
                };
                if best.len() < ef || best.peek().is_some_and(|w| c.dist < w.dist) {
                    frontier.push(Reverse(c));
                    if accept(n) {
                        best.push(c);
                        if best.len() > ef {
                            best.pop();
                        }
                    }
                }
            }
        }
        best.into_sorted_vec()
    }

    /// Up to `ef` accepted nodes near `q` (a unit vector), nearest first.
    pub fn search(&self, vecs: &Vectors<'_>, q: &[f32], ef: usize, accept: &dyn Fn(u32) -> bool) -> Vec<Candidate> {
        let Some(entry) = self.entry else {
            return Vec::new();
        };
        let mut ep = Candidate {
            dist: vecs.dist(q, entry),
            node: entry,
        };
        for layer in (1..=self.top_level()).rev() {
            ep = self.greedy_closest(vecs, q, ep, layer);
        }
        self.search_layer(vecs, q, &[ep], ef, 0, accept)
    }
}

/// Neighbor-selection heuristic: keep a candidate only if it is closer to
/// the base than to every neighbor kept so far, then top up with the
/// discarded candidates in distance order. `cands` must be sorted.
fn select_neighbors(vecs: &Vectors<'_>, cands: &[Candidate], m: usize) -> Vec<u32> {
    let mut kept: Vec<u32> = Vec::with_capacity(m);
    let mut pruned: Vec<u32> = Vec::new();
    for c in cands {
        if kept.len() >= m {
            break;
        }
        let cv = vecs.get(c.node);
        if kept.iter().all(|&k| vecs.dist(cv, k) > c.dist) {
            kept.push(c.node);
        } else {
            pruned.push(c.node);
        }
    }
    for p in pruned {
        if kept.len() >= m {
            break;
        }
        kept.push(p);
    }
    kept
}
