//! In-memory HNSW graph over dense `f32` vectors.
//!
//! Nodes are addressed by their insertion index, which is also the position of
//! the node's record in the collection's segment file. External ids map to the
//! newest live node carrying that id; removed nodes stay in the graph as
//! tombstones so that navigation through them keeps working until the owning
//! collection compacts.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{HnswParams, Metric, SearchHit};

type NodeIdx = u32;

/// Hard cap on the level of any node; with `mL = 1/ln(M)` and `M >= 2` the
/// chance of reaching it is negligible.
const MAX_LEVEL: usize = 16;

#[derive(Clone, Copy, Debug)]
struct Scored {
    dist: f32,
    node: NodeIdx,
}

impl PartialEq for Scored {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scored {}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.node.cmp(&other.node))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Hnsw {
    params: HnswParams,
    dim: usize,
    seed: u64,
    vectors: Vec<f32>,
    ids: Vec<u64>,
    /// `links[node][layer]` holds the out-neighbours of `node` at `layer`.
    links: Vec<Vec<Vec<NodeIdx>>>,
    deleted: Vec<bool>,
    live: HashMap<u64, NodeIdx>,
    entry: Option<NodeIdx>,
    max_level: usize,
}

impl Hnsw {
    pub(crate) fn new(dim: usize, params: HnswParams, seed: u64) -> Self {
        Self {
            params,
            dim,
            seed,
            vectors: Vec::new(),
            ids: Vec::new(),
            links: Vec::new(),
            deleted: Vec::new(),
            live: HashMap::new(),
            entry: None,
            max_level: 0,
        }
    }

    pub(crate) fn params(&self) -> &HnswParams {
        &self.params
    }

    pub(crate) fn dim(&self) -> usize {
        self.dim
    }

    pub(crate) fn seed(&self) -> u64 {
        self.seed
    }

    /// Total nodes including tombstones.
    pub(crate) fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub(crate) fn live_count(&self) -> usize {
        self.live.len()
    }

    pub(crate) fn dead_count(&self) -> usize {
        self.node_count() - self.live_count()
    }

    pub(crate) fn contains(&self, id: u64) -> bool {
        self.live.contains_key(&id)
    }

    fn vector(&self, node: NodeIdx) -> &[f32] {
        let start = node as usize * self.dim;
        &self.vectors[start..start + self.dim]
    }

    /// Live `(id, vector)` pairs in insertion order.
    pub(crate) fn live_entries(&self) -> impl Iterator<Item = (u64, &[f32])> + '_ {
        (0..self.node_count() as NodeIdx)
            .filter(|&n| !self.deleted[n as usize])
            .map(|n| (self.ids[n as usize], self.vector(n)))
    }

    /// Ordering key used inside the graph. Monotone in the reported distance.
    fn raw_distance(&self, a: &[f32], b: &[f32]) -> f32 {
        match self.params.metric {
            Metric::Cosine => {
                let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                (1.0 - dot).clamp(0.0, 2.0)
            }
            Metric::L2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        }
    }

    fn reported(&self, raw: f32) -> f32 {
        match self.params.metric {
            Metric::Cosine => raw,
            Metric::L2 => raw.sqrt(),
        }
    }

    fn node_distance(&self, query: &[f32], node: NodeIdx) -> f32 {
        self.raw_distance(query, self.vector(node))
    }

    /// Level for the `seq`-th insertion; a pure function of `(seed, seq)`.
    fn draw_level(&self, seq: u64) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(seq);
        let u: f64 = rng.gen();
        let ml = 1.0 / (self.params.m as f64).ln();
        ((-(1.0 - u).ln() * ml).floor() as usize).min(MAX_LEVEL)
    }

    fn layer_cap(&self, layer: usize) -> usize {
        if layer == 0 {
            self.params.m * 2
        } else {
            self.params.m
        }
    }

    /// Appends a node. The caller guarantees `vector.len() == dim` and that
    /// `id` is not currently live.
    pub(crate) fn insert(&mut self, id: u64, vector: &[f32]) {
        debug_assert_eq!(vector.len(), self.dim);
        debug_assert!(!self.live.contains_key(&id));
        let node = self.ids.len() as NodeIdx;
        let level = self.draw_level(u64::from(node));

        self.vectors.extend_from_slice(vector);
        self.ids.push(id);
        self.deleted.push(false);
        self.links.push(vec![Vec::new(); level + 1]);
        self.live.insert(id, node);

        let Some(mut ep) = self.entry else {
            self.entry = Some(node);
            self.max_level = level;
            return;
        };

        let query = vector.to_vec();
        let mut ep_dist = self.node_distance(&query, ep);
        for layer in (level + 1..=self.max_level).rev() {
            (ep, ep_dist) = self.greedy_closest(&query, ep, ep_dist, layer);
        }

        let mut entry_points = vec![Scored {
            dist: ep_dist,
            node: ep,
        }];
        for layer in (0..=level.min(self.max_level)).rev() {
            let candidates =
                self.search_layer(&query, &entry_points, self.params.ef_construction, layer, false);
            let chosen = self.select_neighbors(&candidates, self.params.m);
            self.links[node as usize][layer] = chosen.iter().map(|s| s.node).collect();
            for s in &chosen {
                self.link_back(s.node, node, layer);
            }
            entry_points = candidates;
        }

        if level > self.max_level {
            self.max_level = level;
            self.entry = Some(node);
        }
    }

    fn link_back(&mut self, from: NodeIdx, to: NodeIdx, layer: usize) {
        let cap = self.layer_cap(layer);
        let list = &mut self.links[from as usize][layer];
        list.push(to);
        if list.len() <= cap {
            return;
        }
        // Over capacity: keep the `cap` nearest neighbours of `from`.
        let base = self.vector(from).to_vec();
        let mut scored: Vec<Scored> = self.links[from as usize][layer]
            .iter()
            .map(|&n| Scored {
                dist: self.node_distance(&base, n),
                node: n,
            })
            .collect();
        scored.sort_unstable();
        scored.truncate(cap);
        self.links[from as usize][layer] = scored.into_iter().map(|s| s.node).collect();
    }

    /// Diversity heuristic: a candidate is kept when it is closer to the base
    /// than to every neighbour already kept. Pruned candidates backfill the
    /// list up to `m` in distance order.
    fn select_neighbors(&self, candidates: &[Scored], m: usize) -> Vec<Scored> {
        let mut kept: Vec<Scored> = Vec::with_capacity(m);
        let mut pruned = Vec::new();
        for &c in candidates {
            if kept.len() >= m {
                break;
            }
            let cv = self.vector(c.node);
            let diverse = kept
                .iter()
                .all(|k| self.raw_distance(cv, self.vector(k.node)) >= c.dist);
            if diverse {
                kept.push(c);
            } else {
                pruned.push(c);
            }
        }
        for c in pruned {
            if kept.len() >= m {
                break;
            }
            kept.push(c);
        }
        kept.sort_unstable();
        kept
    }

    fn greedy_closest(
        &self,
        query: &[f32],
        mut best: NodeIdx,
        mut best_dist: f32,
        layer: usize,
    ) -> (NodeIdx, f32) {
        loop {
            let mut improved = false;
            for &n in self.neighbors(best, layer) {
                let d = self.node_distance(query, n);
                if (Scored { dist: d, node: n }) < (Scored {
                    dist: best_dist,
                    node: best,
                }) {
                    best = n;
                    best_dist = d;
                    improved = true;
                }
            }
            if !improved {
                return (best, best_dist);
            }
        }
    }

    fn neighbors(&self, node: NodeIdx, layer: usize) -> &[NodeIdx] {
        self.links[node as usize]
            .get(layer)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Beam search on one layer. Returns up to `ef` nodes sorted ascending.
    /// With `live_only`, tombstoned nodes are traversed but never returned.
    fn search_layer(
        &self,
        query: &[f32],
        entry_points: &[Scored],
        ef: usize,
        layer: usize,
        live_only: bool,
    ) -> Vec<Scored> {
        let mut visited = vec![false; self.node_count()];
        let mut frontier: BinaryHeap<std::cmp::Reverse<Scored>> = BinaryHeap::new();
        let mut results: BinaryHeap<Scored> = BinaryHeap::new();

        for &ep in entry_points {
            if std::mem::replace(&mut visited[ep.node as usize], true) {
                continue;
            }
            frontier.push(std::cmp::Reverse(ep));
            if !live_only || !self.deleted[ep.node as usize] {
                results.push(ep);
                if results.len() > ef {
                    results.pop();
                }
            }
        }

        while let Some(std::cmp::Reverse(current)) = frontier.pop() {
            if results.len() >= ef {
                if let Some(worst) = results.peek() {
                    if current.dist > worst.dist {
                        break;
                    }
                }
            }
            for &n in self.neighbors(current.node, layer) {
                if std::mem::replace(&mut visited[n as usize], true) {
                    continue;
                }
                let cand = Scored {
                    dist: self.node_distance(query, n),
                    node: n,
                };
                let admit = results.len() < ef
                    || results.peek().map_or(true, |worst| cand < *worst);
                if !admit {
                    continue;
                }
                frontier.push(std::cmp::Reverse(cand));
                if !live_only || !self.deleted[n as usize] {
                    results.push(cand);
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }

        results.into_sorted_vec()
    }

    pub(crate) fn search(&self, query: &[f32], k: usize, ef: usize) -> Vec<SearchHit> {
        let Some(ep) = self.entry else {
            return Vec::new();
        };
        if self.live.is_empty() || k == 0 {
            return Vec::new();
        }
        let ef = ef.max(k);
        let mut cur = ep;
        let mut cur_dist = self.node_distance(query, ep);
        for layer in (1..=self.max_level).rev() {
            (cur, cur_dist) = self.greedy_closest(query, cur, cur_dist, layer);
        }
        let found = self.search_layer(
            query,
            &[Scored {
                dist: cur_dist,
                node: cur,
            }],
            ef,
            0,
            true,
        );
        self.finish(found.into_iter(), k)
    }

    pub(crate) fn exact_search(&self, query: &[f32], k: usize) -> Vec<SearchHit> {
        let all = (0..self.node_count() as NodeIdx)
            .filter(|&n| !self.deleted[n as usize])
            .map(|n| Scored {
                dist: self.node_distance(query, n),
                node: n,
            });
        self.finish(all, k)
    }

    fn finish(&self, nodes: impl Iterator<Item = Scored>, k: usize) -> Vec<SearchHit> {
        let mut hits: Vec<SearchHit> = nodes
            .map(|s| SearchHit {
                id: self.ids[s.node as usize],
                distance: self.reported(s.dist),
            })
            .collect();
        hits.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
        hits.truncate(k);
        hits
    }

    /// Tombstones the live node carrying `id`. Returns whether one existed.
    pub(crate) fn remove(&mut self, id: u64) -> bool {
        match self.live.remove(&id) {
            Some(node) => {
                self.deleted[node as usize] = true;
                true
            }
            None => false,
        }
    }

    /// Fresh graph containing only the live vectors, inserted in their
    /// original order.
    pub(crate) fn compacted(&self) -> Hnsw {
        let mut fresh = Hnsw::new(self.dim, self.params.clone(), self.seed);
        for (id, v) in self.live_entries() {
            fresh.insert(id, v);
        }
        fresh
    }

    /// Largest neighbour list observed at layer 0 and at any upper layer.
    pub(crate) fn max_degrees(&self) -> (usize, usize) {
        let mut base = 0;
        let mut upper = 0;
        for node in &self.links {
            for (layer, list) in node.iter().enumerate() {
                if layer == 0 {
                    base = base.max(list.len());
                } else {
                    upper = upper.max(list.len());
                }
            }
        }
        (base, upper)
    }

    pub(crate) fn max_level(&self) -> usize {
        self.max_level
    }

    pub(crate) fn entry(&self) -> Option<u32> {
        self.entry
    }

    pub(crate) fn node_parts(&self, node: usize) -> (u64, bool, &[Vec<NodeIdx>]) {
        (self.ids[node], self.deleted[node], &self.links[node])
    }

    /// Reassembles a graph from persisted topology plus the vectors read back
    /// from the segment file, in node order.
    pub(crate) fn from_parts(
        dim: usize,
        params: HnswParams,
        seed: u64,
        vectors: Vec<f32>,
        nodes: Vec<(u64, bool, Vec<Vec<NodeIdx>>)>,
        entry: Option<NodeIdx>,
        max_level: usize,
    ) -> Option<Hnsw> {
        if vectors.len() != nodes.len() * dim {
            return None;
        }
        let n = nodes.len();
        let mut ids = Vec::with_capacity(n);
        let mut deleted = Vec::with_capacity(n);
        let mut links = Vec::with_capacity(n);
        let mut live = HashMap::new();
        for (idx, (id, dead, node_links)) in nodes.into_iter().enumerate() {
            if node_links.is_empty() || node_links.iter().flatten().any(|&t| t as usize >= n) {
                return None;
            }
            if !dead {
                live.insert(id, idx as NodeIdx);
            }
            ids.push(id);
            deleted.push(dead);
            links.push(node_links);
        }
        if entry.map_or(n != 0, |e| e as usize >= n) {
            return None;
        }
        Some(Hnsw {
            params,
            dim,
            seed,
            vectors,
            ids,
            links,
            deleted,
            live,
            entry,
            max_level,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    }

    fn params(m: usize) -> HnswParams {
        HnswParams {
            m,
            ef_construction: 64.max(m),
            ef_search: 64,
            metric: Metric::Cosine,
        }
    }

    #[test]
    fn degree_bounds_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Hnsw::new(8, params(4), 11);
        for id in 0..600 {
            g.insert(id, &random_unit(&mut rng, 8));
        }
        let (base, upper) = g.max_degrees();
        assert!(base <= 8, "layer 0 degree {base}");
        assert!(upper <= 4, "upper degree {upper}");
        assert!(g.max_level() >= 1);
    }

    #[test]
    fn level_draw_is_pure() {
        let g = Hnsw::new(4, params(16), 99);
        let a: Vec<usize> = (0..200).map(|s| g.draw_level(s)).collect();
        let b: Vec<usize> = (0..200).map(|s| g.draw_level(s)).collect();
        assert_eq!(a, b);
        // roughly 1/M of nodes land above layer 0
        let upper = a.iter().filter(|&&l| l > 0).count();
        assert!(upper > 2 && upper < 40, "{upper}");
    }

    #[test]
    fn tombstones_are_traversed_but_not_returned() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Hnsw::new(6, params(6), 1);
        let vs: Vec<Vec<f32>> = (0..300).map(|_| random_unit(&mut rng, 6)).collect();
        for (i, v) in vs.iter().enumerate() {
            g.insert(i as u64, v);
        }
        for id in (0..300).step_by(2) {
            assert!(g.remove(id));
        }
        assert!(!g.remove(0));
        for v in vs.iter().take(20) {
            let hits = g.search(v, 10, 64);
            assert_eq!(hits.len(), 10);
            assert!(hits.iter().all(|h| h.id % 2 == 1));
        }
    }

    #[test]
    fn reinserting_a_removed_id_points_at_the_new_vector() {
        let mut g = Hnsw::new(2, params(4), 0);
        g.insert(7, &[1.0, 0.0]);
        g.insert(8, &[0.0, 1.0]);
        g.remove(7);
        g.insert(7, &[0.0, 1.0]);
        let hits = g.search(&[0.0, 1.0], 2, 10);
        assert_eq!(hits.iter().map(|h| h.id).collect::<Vec<_>>(), vec![7, 8]);
        assert_eq!(g.dead_count(), 1);
        let c = g.compacted();
        assert_eq!(c.node_count(), 2);
        assert_eq!(c.search(&[0.0, 1.0], 1, 10)[0].id, 7);
    }
}
