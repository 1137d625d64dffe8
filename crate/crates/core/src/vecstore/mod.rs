//! Embedded vector store: one HNSW-indexed collection per embedder.
//!
//! Collections live under `<root>/<name>/` (see [`persist`] for the file
//! layout) or purely in memory. Searches take a read lock on their
//! collection, inserts and removals a write lock, so readers always see a
//! whole graph.

mod hnsw;
mod persist;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64;

use hnsw::Hnsw;
use persist::CollectionFiles;

/// Dead-node ratio at which a collection rebuilds its graph.
pub const COMPACTION_DEAD_RATIO: f64 = 0.3;

#[derive(Debug, Error)]
pub enum VecStoreError {
    #[error("collection {0:?} already exists with different parameters")]
    CollectionExistsWithDifferentParams(String),
    #[error("dimension must be at least 1")]
    InvalidDim,
    #[error("invalid HNSW parameters: {0}")]
    InvalidParams(String),
    #[error("expected {expected} components, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("id {0} already present")]
    DuplicateId(u64),
    #[error("vector has a non-finite component")]
    NonFiniteComponent,
    #[error("zero vector cannot be normalized for cosine distance")]
    ZeroVector,
    #[error("unknown collection {0:?}")]
    UnknownCollection(String),
    #[error("corrupt collection data: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Maximum out-degree on upper layers; layer 0 allows `2 * m`.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub metric: Metric,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 48,
            ef_construction: 200,
            ef_search: 200,
            metric: Metric::Cosine,
        }
    }
}

impl HnswParams {
    pub fn validate(&self) -> Result<(), VecStoreError> {
        if self.m < 2 {
            return Err(VecStoreError::InvalidParams("M must be >= 2".into()));
        }
        if self.ef_construction < self.m {
            return Err(VecStoreError::InvalidParams(
                "efConstruction must be >= M".into(),
            ));
        }
        if self.ef_search < 1 {
            return Err(VecStoreError::InvalidParams("efSearch must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: u64,
    pub distance: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectionInfo {
    pub name: String,
    pub dim: usize,
    pub params: HnswParams,
    pub count: usize,
}

struct Collection {
    name: String,
    graph: Hnsw,
    files: Option<CollectionFiles>,
}

impl Collection {
    fn info(&self) -> CollectionInfo {
        CollectionInfo {
            name: self.name.clone(),
            dim: self.graph.dim(),
            params: self.graph.params().clone(),
            count: self.graph.live_count(),
        }
    }

    fn prepare(&self, vector: &[f32]) -> Result<Vec<f32>, VecStoreError> {
        let dim = self.graph.dim();
        if vector.len() != dim {
            return Err(VecStoreError::DimensionMismatch {
                expected: dim,
                got: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(VecStoreError::NonFiniteComponent);
        }
        match self.graph.params().metric {
            Metric::L2 => Ok(vector.to_vec()),
            Metric::Cosine => {
                let norm = vector
                    .iter()
                    .map(|&x| f64::from(x) * f64::from(x))
                    .sum::<f64>()
                    .sqrt();
                if norm == 0.0 || !norm.is_finite() {
                    return Err(VecStoreError::ZeroVector);
                }
                Ok(vector.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
            }
        }
    }

    fn insert(&mut self, id: u64, vector: &[f32]) -> Result<(), VecStoreError> {
        if self.graph.contains(id) {
            return Err(VecStoreError::DuplicateId(id));
        }
        let stored = self.prepare(vector)?;
        if let Some(files) = self.files.as_mut() {
            files.append_segment(id, &stored)?;
        }
        self.graph.insert(id, &stored);
        Ok(())
    }

    fn remove(&mut self, id: u64) -> Result<(), VecStoreError> {
        if !self.graph.remove(id) {
            return Ok(());
        }
        if let Some(files) = self.files.as_mut() {
            files.append_tombstone(id)?;
        }
        let nodes = self.graph.node_count();
        if nodes > 0 && self.graph.dead_count() as f64 / nodes as f64 >= COMPACTION_DEAD_RATIO {
            self.compact()?;
        }
        Ok(())
    }

    fn compact(&mut self) -> Result<(), VecStoreError> {
        self.graph = self.graph.compacted();
        if let Some(files) = self.files.as_mut() {
            files.compact(&self.graph)?;
        }
        Ok(())
    }
}

/// Thread-safe handle to a set of collections.
#[derive(Clone)]
pub struct VectorStore {
    root: Option<PathBuf>,
    collections: Arc<RwLock<BTreeMap<String, Arc<RwLock<Collection>>>>>,
}

impl std::fmt::Debug for VectorStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorStore")
            .field("root", &self.root)
            .field("collections", &self.collections.read().keys().collect::<Vec<_>>())
            .finish()
    }
}

impl VectorStore {
    pub fn in_memory() -> Self {
        Self {
            root: None,
            collections: Arc::default(),
        }
    }

    /// Opens (or creates) a store rooted at `root`, restoring every
    /// collection subdirectory found there.
    pub fn open(root: &Path) -> Result<Self, VecStoreError> {
        std::fs::create_dir_all(root)?;
        let mut map = BTreeMap::new();
        let mut dirs: Vec<_> = std::fs::read_dir(root)?
            .filter_map(Result::ok)
            .filter(|e| e.path().is_dir())
            .collect();
        dirs.sort_by_key(|e| e.file_name());
        for entry in dirs {
            let path = entry.path();
            let name = entry.file_name().to_string_lossy().into_owned();
            let (files, graph) = CollectionFiles::open(&path)?;
            map.insert(
                name.clone(),
                Arc::new(RwLock::new(Collection {
                    name,
                    graph,
                    files: Some(files),
                })),
            );
        }
        Ok(Self {
            root: Some(root.to_path_buf()),
            collections: Arc::new(RwLock::new(map)),
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    /// Seed used for a collection's level RNG unless one is given explicitly.
    pub fn default_seed(name: &str) -> u64 {
        xxh3_64(name.as_bytes())
    }

    pub fn create_collection(
        &self,
        name: &str,
        dim: usize,
        params: HnswParams,
    ) -> Result<CollectionInfo, VecStoreError> {
        self.create_collection_seeded(name, dim, params, Self::default_seed(name))
    }

    pub fn create_collection_seeded(
        &self,
        name: &str,
        dim: usize,
        params: HnswParams,
        seed: u64,
    ) -> Result<CollectionInfo, VecStoreError> {
        if dim == 0 {
            return Err(VecStoreError::InvalidDim);
        }
        params.validate()?;
        if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
            return Err(VecStoreError::InvalidParams(format!(
                "collection name {name:?} is not a valid directory name"
            )));
        }
        let mut map = self.collections.write();
        if let Some(existing) = map.get(name) {
            let existing = existing.read();
            let info = existing.info();
            if info.dim == dim && info.params == params && existing.graph.seed() == seed {
                return Ok(info);
            }
            return Err(VecStoreError::CollectionExistsWithDifferentParams(
                name.to_string(),
            ));
        }
        let graph = Hnsw::new(dim, params, seed);
        let files = match &self.root {
            Some(root) => Some(CollectionFiles::create(&root.join(name), &graph)?),
            None => None,
        };
        let collection = Collection {
            name: name.to_string(),
            graph,
            files,
        };
        let info = collection.info();
        map.insert(name.to_string(), Arc::new(RwLock::new(collection)));
        Ok(info)
    }

    fn collection(&self, name: &str) -> Result<Arc<RwLock<Collection>>, VecStoreError> {
        self.collections
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| VecStoreError::UnknownCollection(name.to_string()))
    }

    pub fn collection_info(&self, name: &str) -> Option<CollectionInfo> {
        self.collection(name).ok().map(|c| c.read().info())
    }

    pub fn collections(&self) -> Vec<CollectionInfo> {
        self.collections
            .read()
            .values()
            .map(|c| c.read().info())
            .collect()
    }

    pub fn insert(&self, name: &str, id: u64, vector: &[f32]) -> Result<(), VecStoreError> {
        self.collection(name)?.write().insert(id, vector)
    }

    /// Inserts `vector` under `id`, replacing any live vector with that id.
    pub fn upsert(&self, name: &str, id: u64, vector: &[f32]) -> Result<(), VecStoreError> {
        let coll = self.collection(name)?;
        let mut coll = coll.write();
        coll.prepare(vector)?;
        coll.remove(id)?;
        coll.insert(id, vector)
    }

    /// Idempotent: unknown ids are ignored.
    pub fn remove(&self, name: &str, id: u64) -> Result<(), VecStoreError> {
        self.collection(name)?.write().remove(id)
    }

    pub fn contains(&self, name: &str, id: u64) -> Result<bool, VecStoreError> {
        Ok(self.collection(name)?.read().graph.contains(id))
    }

    /// Live ids in ascending order.
    pub fn live_ids(&self, name: &str) -> Result<Vec<u64>, VecStoreError> {
        let coll = self.collection(name)?;
        let coll = coll.read();
        let mut ids: Vec<u64> = coll.graph.live_entries().map(|(id, _)| id).collect();
        ids.sort_unstable();
        Ok(ids)
    }

    /// Approximate k-NN. `ef_search` is raised to `k` when smaller.
    pub fn search(
        &self,
        name: &str,
        query: &[f32],
        k: usize,
        ef_search: usize,
    ) -> Result<Vec<SearchHit>, VecStoreError> {
        let coll = self.collection(name)?;
        let coll = coll.read();
        let q = coll.prepare(query)?;
        Ok(coll.graph.search(&q, k, ef_search.max(k)))
    }

    /// Search with the collection's configured `ef_search`.
    pub fn search_default(
        &self,
        name: &str,
        query: &[f32],
        k: usize,
    ) -> Result<Vec<SearchHit>, VecStoreError> {
        let ef = self.collection(name)?.read().graph.params().ef_search;
        self.search(name, query, k, ef)
    }

    /// Brute-force scan over every live vector.
    pub fn exact_search(
        &self,
        name: &str,
        query: &[f32],
        k: usize,
    ) -> Result<Vec<SearchHit>, VecStoreError> {
        let coll = self.collection(name)?;
        let coll = coll.read();
        let q = coll.prepare(query)?;
        Ok(coll.graph.exact_search(&q, k))
    }

    /// Forces compaction regardless of the dead ratio.
    pub fn compact(&self, name: &str) -> Result<(), VecStoreError> {
        self.collection(name)?.write().compact()
    }

    /// Syncs logs and rewrites every collection's graph snapshot.
    pub fn flush(&self) -> Result<(), VecStoreError> {
        let colls: Vec<_> = self.collections.read().values().cloned().collect();
        for coll in colls {
            let mut coll = coll.write();
            let Collection { graph, files, .. } = &mut *coll;
            if let Some(files) = files.as_mut() {
                files.write_snapshot(graph)?;
            }
        }
        Ok(())
    }

    /// `(layer 0, upper layers)` maximum neighbour-list lengths.
    pub fn max_degrees(&self, name: &str) -> Result<(usize, usize), VecStoreError> {
        Ok(self.collection(name)?.read().graph.max_degrees())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> HnswParams {
        HnswParams {
            m: 4,
            ef_construction: 16,
            ef_search: 16,
            metric: Metric::Cosine,
        }
    }

    #[test]
    fn create_is_idempotent_and_guards_params() {
        let store = VectorStore::in_memory();
        let info = store.create_collection("eva", 64, HnswParams::default()).unwrap();
        assert_eq!(info.count, 0);
        assert_eq!(
            store.create_collection("eva", 64, HnswParams::default()).unwrap(),
            info
        );
        assert!(matches!(
            store.create_collection("eva", 128, HnswParams::default()),
            Err(VecStoreError::CollectionExistsWithDifferentParams(_))
        ));
        assert!(matches!(
            store.create_collection("x", 0, HnswParams::default()),
            Err(VecStoreError::InvalidDim)
        ));
    }

    #[test]
    fn params_validation() {
        let mut p = HnswParams::default();
        assert!(p.validate().is_ok());
        p.m = 1;
        assert!(p.validate().is_err());
        p = HnswParams {
            ef_construction: 10,
            ..HnswParams::default()
        };
        assert!(p.validate().is_err());
        p = HnswParams {
            ef_search: 0,
            ..HnswParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn one_hot_lookup() {
        let store = VectorStore::in_memory();
        store.create_collection("c", 3, small()).unwrap();
        store.insert("c", 1, &[1.0, 0.0, 0.0]).unwrap();
        store.insert("c", 2, &[0.0, 1.0, 0.0]).unwrap();
        store.insert("c", 3, &[0.0, 0.0, 1.0]).unwrap();
        let hits = store.search("c", &[1.0, 0.0, 0.0], 1, 16).unwrap();
        assert_eq!(hits, vec![SearchHit { id: 1, distance: 0.0 }]);
    }

    #[test]
    fn insert_errors() {
        let store = VectorStore::in_memory();
        store.create_collection("c", 2, small()).unwrap();
        store.insert("c", 1, &[1.0, 0.0]).unwrap();
        assert!(matches!(
            store.insert("c", 1, &[0.0, 1.0]),
            Err(VecStoreError::DuplicateId(1))
        ));
        assert!(matches!(
            store.insert("c", 2, &[1.0]),
            Err(VecStoreError::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(matches!(
            store.insert("c", 2, &[f32::NAN, 1.0]),
            Err(VecStoreError::NonFiniteComponent)
        ));
        assert!(matches!(
            store.insert("c", 2, &[0.0, 0.0]),
            Err(VecStoreError::ZeroVector)
        ));
        assert!(matches!(
            store.search("nope", &[1.0, 0.0], 1, 1),
            Err(VecStoreError::UnknownCollection(_))
        ));
    }

    #[test]
    fn empty_and_oversized_k() {
        let store = VectorStore::in_memory();
        store.create_collection("c", 2, small()).unwrap();
        assert!(store.search("c", &[1.0, 0.0], 5, 1).unwrap().is_empty());
        assert!(store.exact_search("c", &[1.0, 0.0], 5).unwrap().is_empty());
        for (id, v) in [(5u64, [1.0f32, 0.1]), (3, [0.2, 1.0]), (9, [1.0, 1.0])] {
            store.insert("c", id, &v).unwrap();
        }
        let hits = store.search("c", &[1.0, 0.0], 10, 1).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(hits, store.exact_search("c", &[1.0, 0.0], 10).unwrap());
        assert!(hits.windows(2).all(|w| w[0].distance <= w[1].distance));
    }

    #[test]
    fn cosine_is_scale_invariant() {
        let store = VectorStore::in_memory();
        store.create_collection("c", 4, small()).unwrap();
        let v = [0.3f32, -1.2, 0.7, 2.0];
        let doubled: Vec<f32> = v.iter().map(|x| x * 2.0).collect();
        store.insert("c", 1, &doubled).unwrap();
        let hit = store.search("c", &v, 1, 4).unwrap()[0];
        assert_eq!(hit.id, 1);
        assert!(hit.distance.abs() < 1e-6, "{}", hit.distance);
    }

    #[test]
    fn l2_distances_are_euclidean() {
        let store = VectorStore::in_memory();
        store
            .create_collection(
                "c",
                2,
                HnswParams {
                    metric: Metric::L2,
                    ..small()
                },
            )
            .unwrap();
        store.insert("c", 1, &[3.0, 4.0]).unwrap();
        store.insert("c", 2, &[0.0, 0.0]).unwrap();
        let hits = store.exact_search("c", &[0.0, 0.0], 2).unwrap();
        assert_eq!(hits[0], SearchHit { id: 2, distance: 0.0 });
        assert_eq!(hits[1], SearchHit { id: 1, distance: 5.0 });
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let store = VectorStore::in_memory();
        store.create_collection("c", 2, small()).unwrap();
        for id in [40u64, 7, 19, 3] {
            store.insert("c", id, &[1.0, 1.0]).unwrap();
        }
        let ids: Vec<u64> = store
            .search("c", &[1.0, 1.0], 4, 16)
            .unwrap()
            .iter()
            .map(|h| h.id)
            .collect();
        assert_eq!(ids, vec![3, 7, 19, 40]);
    }

    #[test]
    fn remove_is_idempotent_and_hides_ids() {
        let store = VectorStore::in_memory();
        store.create_collection("c", 2, small()).unwrap();
        store.insert("c", 1, &[1.0, 0.0]).unwrap();
        store.insert("c", 2, &[0.0, 1.0]).unwrap();
        store.remove("c", 1).unwrap();
        store.remove("c", 1).unwrap();
        store.remove("c", 77).unwrap();
        let hits = store.search("c", &[1.0, 0.0], 5, 5).unwrap();
        assert_eq!(hits.iter().map(|h| h.id).collect::<Vec<_>>(), vec![2]);
        assert_eq!(store.live_ids("c").unwrap(), vec![2]);
    }

    #[test]
    fn upsert_replaces_vector() {
        let store = VectorStore::in_memory();
        store.create_collection("c", 2, small()).unwrap();
        store.insert("c", 1, &[1.0, 0.0]).unwrap();
        store.insert("c", 2, &[0.6, 0.8]).unwrap();
        store.upsert("c", 1, &[0.0, 1.0]).unwrap();
        assert_eq!(store.exact_search("c", &[0.0, 1.0], 1).unwrap()[0].id, 1);
        assert_eq!(store.collection_info("c").unwrap().count, 2);
    }
}
