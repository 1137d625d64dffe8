//! Directory indexing: a priority queue of directory tasks drained in batches
//! by worker threads, a filesystem watcher and an offline reconciler keeping
//! catalog and vector store in step with disk.

mod queue;
mod scan;
mod watch;

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64;

use crate::catalog::{
    Catalog, CatalogError, DirectoryEntry, DirectoryId, ImageCandidate, ImageId, ImageRecord,
    IndexState, Progress, UpsertChange,
};
use crate::embedders::{embed_batch, EmbedderError, EmbedderSet};
use crate::pixels::ImagePixels;
use crate::vecstore::{VecStoreError, VectorStore};

pub use queue::{IndexTask, TaskQueue, PRIORITY_RECONCILE, PRIORITY_USER, PRIORITY_WATCH};
pub use scan::{is_image_path, scan_directory, ScannedFile};
pub use watch::{WatchEvent, WatchKind};

const STRIPES: usize = 64;
const BATCH_LOG: usize = 4096;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("path not found: {}", .0.display())]
    PathNotFound(PathBuf),
    #[error("directory {0} is already registered")]
    AlreadyRegistered(DirectoryId),
    #[error("batch of {len} exceeds the limit of {limit}")]
    BatchTooLarge { len: usize, limit: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("watcher: {0}")]
    Watch(#[from] notify::Error),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Store(#[from] VecStoreError),
    #[error(transparent)]
    Embedder(#[from] EmbedderError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestConfig {
    pub workers: usize,
    pub batch_size: usize,
    pub debounce: Duration,
    /// `None` disables periodic reconciliation.
    pub reconcile_every: Option<Duration>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            batch_size: 50,
            debounce: Duration::from_millis(500),
            reconcile_every: Some(Duration::from_secs(600)),
        }
    }
}

impl IngestConfig {
    /// Reads NEEDLE_WORKERS, NEEDLE_BATCH_SIZE and NEEDLE_RECONCILE_MINUTES
    /// (0 disables the periodic pass).
    pub fn from_env() -> Result<Self, IngestError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, IngestError> {
        let mut config = Self::default();
        let num = |key: &str| -> Result<Option<u64>, IngestError> {
            get(key)
                .map(|v| {
                    v.trim()
                        .parse::<u64>()
                        .map_err(|_| IngestError::InvalidConfig(format!("{key}={v:?}")))
                })
                .transpose()
        };
        if let Some(w) = num("NEEDLE_WORKERS")? {
            config.workers = w as usize;
        }
        if let Some(b) = num("NEEDLE_BATCH_SIZE")? {
            config.batch_size = b as usize;
        }
        if let Some(m) = num("NEEDLE_RECONCILE_MINUTES")? {
            config.reconcile_every = (m > 0).then(|| Duration::from_secs(m * 60));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.workers == 0 {
            return Err(IngestError::InvalidConfig("workers must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(IngestError::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BatchStat {
    pub directory: DirectoryId,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BatchOutcome {
    /// Records whose pending embedders all got a vector.
    pub indexed: usize,
    /// Records with at least one embedder marked failed.
    pub failed: usize,
    /// Records removed or changed underneath the batch.
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReconcileReport {
    pub added: u64,
    pub removed: u64,
    pub reembedded: u64,
    /// Store/catalog disagreements fixed: orphan vectors dropped and indexed
    /// records whose vector was missing reset to pending.
    pub repaired: u64,
    pub unreachable: Vec<UnreachableDirectory>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnreachableDirectory {
    pub id: DirectoryId,
    pub path: PathBuf,
    pub reason: String,
}

struct Inner {
    catalog: Arc<Catalog>,
    store: VectorStore,
    embedders: EmbedderSet,
    config: IngestConfig,
    queue: TaskQueue,
    stripes: Vec<Mutex<()>>,
    /// Watch handling holds it shared; reconciliation exclusively.
    gate: RwLock<()>,
    batches: Mutex<VecDeque<BatchStat>>,
    largest_embed_call: AtomicUsize,
    shutdown: AtomicBool,
    watcher: Mutex<Option<notify::RecommendedWatcher>>,
    pending_events: AtomicUsize,
}

/// Owns the indexing threads. Dropping it stops them; catalog states are
/// the checkpoint a later instance resumes from.
pub struct Indexer {
    inner: Arc<Inner>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    stop_reconciler: Mutex<Option<std::sync::mpsc::Sender<()>>>,
}

impl Indexer {
    /// The embedders' collections must already exist in `store`.
    pub fn new(
        catalog: Arc<Catalog>,
        store: VectorStore,
        embedders: EmbedderSet,
        config: IngestConfig,
    ) -> Result<Self, IngestError> {
        config.validate()?;
        let names = embedders.enabled_names();
        for name in &names {
            if store.collection_info(name).is_none() {
                return Err(VecStoreError::UnknownCollection(name.clone()).into());
            }
        }
        catalog.set_embedders(&names)?;
        Ok(Self {
            inner: Arc::new(Inner {
                catalog,
                store,
                embedders,
                config,
                queue: TaskQueue::default(),
                stripes: (0..STRIPES).map(|_| Mutex::new(())).collect(),
                gate: RwLock::new(()),
                batches: Mutex::new(VecDeque::new()),
                largest_embed_call: AtomicUsize::new(0),
                shutdown: AtomicBool::new(false),
                watcher: Mutex::new(None),
                pending_events: AtomicUsize::new(0),
            }),
            threads: Mutex::new(Vec::new()),
            stop_reconciler: Mutex::new(None),
        })
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.inner.catalog
    }

    pub fn store(&self) -> &VectorStore {
        &self.inner.store
    }

    pub fn embedders(&self) -> &EmbedderSet {
        &self.inner.embedders
    }

    pub fn config(&self) -> &IngestConfig {
        &self.inner.config
    }

    pub fn queue(&self) -> &TaskQueue {
        &self.inner.queue
    }

    /// Starts workers, the watcher and the reconciler, after one
    /// reconciliation pass that also resumes interrupted directories.
    pub fn start(&self) -> Result<ReconcileReport, IngestError> {
        let report = self.reconcile()?;
        self.start_workers();
        self.start_watcher()?;
        self.start_reconciler();
        Ok(report)
    }

    pub fn start_workers(&self) {
        let mut threads = self.threads.lock();
        for i in 0..self.inner.config.workers {
            let inner = Arc::clone(&self.inner);
            threads.push(
                std::thread::Builder::new()
                    .name(format!("needle-index-{i}"))
                    .spawn(move || inner.worker_loop())
                    .expect("spawn index worker"),
            );
        }
    }

    pub fn start_watcher(&self) -> Result<(), IngestError> {
        let (watcher, handle) = watch::spawn(Arc::clone(&self.inner))?;
        *self.inner.watcher.lock() = Some(watcher);
        for dir in self.inner.catalog.directories()? {
            if dir.enabled {
                self.inner.watch(&dir.path);
            }
        }
        self.threads.lock().push(handle);
        Ok(())
    }

    fn start_reconciler(&self) {
        let Some(every) = self.inner.config.reconcile_every else {
            return;
        };
        let (tx, rx) = std::sync::mpsc::channel::<()>();
        *self.stop_reconciler.lock() = Some(tx);
        let inner = Arc::clone(&self.inner);
        let handle = std::thread::Builder::new()
            .name("needle-reconcile".into())
            .spawn(move || {
                while let Err(std::sync::mpsc::RecvTimeoutError::Timeout) = rx.recv_timeout(every) {
                    match inner.reconcile() {
                        Ok(r) => log::info!("periodic reconcile: {r:?}"),
                        Err(e) => log::warn!("periodic reconcile failed: {e}"),
                    }
                }
            })
            .expect("spawn reconciler");
        self.threads.lock().push(handle);
    }

    /// Stops all threads after their current batch.
    pub fn shutdown(&self) {
        self.inner.shutdown.store(true, Ordering::SeqCst);
        self.inner.queue.close();
        self.stop_reconciler.lock().take();
        self.inner.watcher.lock().take();
        for t in self.threads.lock().drain(..) {
            let _ = t.join();
        }
    }

    /// Registers a directory, records its images and queues it at user
    /// priority.
    pub fn add_directory(&self, path: &Path) -> Result<DirectoryEntry, IngestError> {
        let (entry, created) = self.inner.catalog.register_directory(path)?;
        if !created {
            return Err(IngestError::AlreadyRegistered(entry.id));
        }
        let mut report = ReconcileReport::default();
        self.inner.sync_directory(&entry, &mut report)?;
        self.inner.queue.push(entry.id, PRIORITY_USER);
        self.inner.watch(&entry.path);
        Ok(self.inner.catalog.directory(entry.id)?.unwrap_or(entry))
    }

    /// Drops the directory, its images and their vectors.
    pub fn remove_directory(&self, id: DirectoryId) -> Result<(), IngestError> {
        let entry = self
            .inner
            .catalog
            .directory(id)?
            .ok_or(CatalogError::UnknownDirectory(id.0))?;
        self.inner.unwatch(&entry.path);
        self.inner.queue.remove(id);
        for record in self.inner.catalog.images_in(id)? {
            let _guard = self.inner.stripe(record.id).lock();
            self.inner.drop_vectors(record.id)?;
        }
        self.inner.catalog.remove_directory(id)?;
        Ok(())
    }

    /// Disabling pauses the directory's work and keeps its vectors; enabling
    /// resynchronizes it with disk and resumes.
    pub fn set_directory_enabled(
        &self,
        id: DirectoryId,
        enabled: bool,
    ) -> Result<DirectoryEntry, IngestError> {
        let entry = self.inner.catalog.set_directory_enabled(id, enabled)?;
        if enabled {
            let _gate = self.inner.gate.read();
            let mut report = ReconcileReport::default();
            if let Err(e) = self.inner.sync_directory(&entry, &mut report) {
                log::warn!("resync of {} failed: {e}", entry.path.display());
            }
            self.inner.queue.push(id, PRIORITY_USER);
            self.inner.watch(&entry.path);
        } else {
            self.inner.unwatch(&entry.path);
            self.inner.queue.remove(id);
        }
        Ok(self.inner.catalog.directory(id)?.unwrap_or(entry))
    }

    pub fn progress(&self, id: DirectoryId) -> Result<Progress, IngestError> {
        Ok(self.inner.catalog.progress(id)?)
    }

    pub fn process_batch(&self, records: &[ImageRecord]) -> Result<BatchOutcome, IngestError> {
        self.inner.process_batch(records)
    }

    /// Drains one directory on the calling thread.
    pub fn index_directory_now(&self, id: DirectoryId) -> Result<(), IngestError> {
        self.inner.drain_directory(id, None)?;
        Ok(())
    }

    pub fn handle_watch_event(&self, event: &WatchEvent) -> Result<(), IngestError> {
        self.inner.handle_watch_event(event)
    }

    pub fn reconcile(&self) -> Result<ReconcileReport, IngestError> {
        self.inner.reconcile()
    }

    /// Recent batch sizes, oldest first.
    pub fn recent_batches(&self) -> Vec<BatchStat> {
        self.inner.batches.lock().iter().copied().collect()
    }

    /// Largest image count handed to a single embedding call so far.
    pub fn largest_embed_call(&self) -> usize {
        self.inner.largest_embed_call.load(Ordering::SeqCst)
    }

    /// Whether worker threads were started and not shut down.
    pub fn is_running(&self) -> bool {
        !self.inner.shutdown.load(Ordering::SeqCst) && !self.threads.lock().is_empty()
    }

    /// No queued or running task and no buffered filesystem event.
    pub fn is_idle(&self) -> bool {
        self.inner.pending_events.load(Ordering::SeqCst) == 0 && self.inner.queue.is_idle()
    }

    /// Polls `is_idle` until it holds or `timeout` passes.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            if self.is_idle() {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

impl Drop for Indexer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

enum TaskEnd {
    Drained,
    Yielded,
}

struct Loaded {
    pixels: ImagePixels,
    hash: u64,
    byte_size: u64,
}

impl Inner {
    fn stripe(&self, id: ImageId) -> &Mutex<()> {
        &self.stripes[(id.0 % STRIPES as u64) as usize]
    }

    fn watch(&self, path: &Path) {
        use notify::Watcher;
        if let Some(w) = self.watcher.lock().as_mut() {
            if let Err(e) = w.watch(path, notify::RecursiveMode::Recursive) {
                log::warn!("cannot watch {}: {e}", path.display());
            }
        }
    }

    fn unwatch(&self, path: &Path) {
        use notify::Watcher;
        if let Some(w) = self.watcher.lock().as_mut() {
            let _ = w.unwatch(path);
        }
    }

    fn worker_loop(self: Arc<Self>) {
        while let Some(task) = self.queue.pop() {
            let result = std::panic::catch_unwind(AssertUnwindSafe(|| {
                self.drain_directory(task.directory, Some(task.priority))
            }));
            match result {
                Ok(Ok(TaskEnd::Drained)) => self.queue.finish(task),
                Ok(Ok(TaskEnd::Yielded)) => self.queue.requeue(task),
                Ok(Err(e)) => {
                    log::warn!("indexing directory {} failed: {e}", task.directory);
                    self.queue.finish(task);
                }
                Err(_) => {
                    log::error!("index worker panicked on directory {}; retrying", task.directory);
                    std::thread::sleep(Duration::from_millis(200));
                    self.queue.requeue(task);
                }
            }
        }
    }

    /// Processes pending batches of `dir` until none remain, or until a
    /// better-priority task waits when running as a queued task.
    fn drain_directory(&self, dir: DirectoryId, priority: Option<u8>) -> Result<TaskEnd, IngestError> {
        loop {
            if self.shutdown.load(Ordering::SeqCst) {
                return Ok(TaskEnd::Drained);
            }
            match self.catalog.directory(dir)? {
                Some(d) if d.enabled => {}
                _ => return Ok(TaskEnd::Drained),
            }
            let records = self
                .catalog
                .list_pending_in_directory(dir, self.config.batch_size)?;
            if records.is_empty() {
                return Ok(TaskEnd::Drained);
            }
            let outcome = self.process_batch(&records)?;
            if outcome.indexed + outcome.failed == 0 && outcome.skipped == 0 {
                return Ok(TaskEnd::Drained);
            }
            if priority.is_some_and(|p| self.queue.should_yield(p)) {
                return Ok(TaskEnd::Yielded);
            }
        }
    }

    fn load(path: &Path) -> Result<Loaded, String> {
        let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
        let pixels = ImagePixels::decode(&bytes).map_err(|e| e.to_string())?;
        Ok(Loaded {
            pixels,
            hash: xxh3_64(&bytes),
            byte_size: bytes.len() as u64,
        })
    }

    fn process_batch(&self, records: &[ImageRecord]) -> Result<BatchOutcome, IngestError> {
        let limit = self.config.batch_size;
        if records.len() > limit {
            return Err(IngestError::BatchTooLarge {
                len: records.len(),
                limit,
            });
        }
        if records.is_empty() {
            return Ok(BatchOutcome::default());
        }
        {
            let mut log = self.batches.lock();
            if log.len() == BATCH_LOG {
                log.pop_front();
            }
            log.push_back(BatchStat {
                directory: records[0].directory_id,
                size: records.len(),
            });
        }

        let mut roots: HashMap<DirectoryId, Option<PathBuf>> = HashMap::new();
        for r in records {
            if !roots.contains_key(&r.directory_id) {
                let root = self.catalog.directory(r.directory_id)?.map(|d| d.path);
                roots.insert(r.directory_id, root);
            }
        }
        let loaded: Vec<Result<Loaded, String>> = records
            .par_iter()
            .map(|r| match &roots[&r.directory_id] {
                Some(root) => Self::load(&root.join(&r.relative_path)),
                None => Err("directory removed".into()),
            })
            .collect();

        // per embedder: batch positions still pending for it
        let embedders = self.embedders.enabled();
        let vectors: Vec<(usize, Result<Vec<Vec<f32>>, EmbedderError>, Vec<usize>)> = embedders
            .par_iter()
            .enumerate()
            .map(|(ei, e)| {
                let name = &e.spec().name;
                let positions: Vec<usize> = (0..records.len())
                    .filter(|&i| {
                        loaded[i].is_ok()
                            && records[i].index_state.get(name) == Some(&IndexState::Pending)
                    })
                    .collect();
                let images: Vec<ImagePixels> = positions
                    .iter()
                    .map(|&i| loaded[i].as_ref().map(|l| l.pixels.clone()).unwrap())
                    .collect();
                self.largest_embed_call
                    .fetch_max(images.len(), Ordering::SeqCst);
                let out = embed_batch(e.as_ref(), &images, limit)
                    .map(|es| es.into_iter().map(|x| x.vector).collect());
                (ei, out, positions)
            })
            .collect();
        let mut per_record: Vec<BTreeMap<&str, Result<&[f32], String>>> =
            vec![BTreeMap::new(); records.len()];
        for (ei, result, positions) in &vectors {
            let name = embedders[*ei].spec().name.as_str();
            match result {
                Ok(vs) => {
                    for (&i, v) in positions.iter().zip(vs) {
                        per_record[i].insert(name, Ok(v.as_slice()));
                    }
                }
                Err(e) => {
                    log::warn!("embedder {name} failed on a batch: {e}");
                    for &i in positions {
                        per_record[i].insert(name, Err(e.to_string()));
                    }
                }
            }
        }

        let mut outcome = BatchOutcome::default();
        for (i, record) in records.iter().enumerate() {
            let _guard = self.stripe(record.id).lock();
            let Some(current) = self.catalog.image(record.id)? else {
                outcome.skipped += 1;
                continue;
            };
            let l = match &loaded[i] {
                Ok(l) => l,
                Err(reason) => {
                    log::warn!("cannot decode {}: {reason}", record.relative_path);
                    self.catalog.set_all_states(record.id, IndexState::Failed)?;
                    outcome.failed += 1;
                    continue;
                }
            };
            if current.content_hash != l.hash {
                // the file changed since it was recorded; record what was read
                self.catalog.upsert_image(&ImageCandidate {
                    directory_id: current.directory_id,
                    relative_path: current.relative_path.clone(),
                    content_hash: l.hash,
                    byte_size: l.byte_size,
                    mtime_ms: current.mtime_ms,
                })?;
            }
            let mut any_failed = false;
            for (name, v) in &per_record[i] {
                let state = match v {
                    Ok(v) => match self.store.upsert(name, record.id.0, v) {
                        Ok(()) => IndexState::Indexed,
                        Err(e) => {
                            log::warn!("cannot store {name} vector of {}: {e}", record.relative_path);
                            IndexState::Failed
                        }
                    },
                    Err(_) => IndexState::Failed,
                };
                any_failed |= state == IndexState::Failed;
                self.catalog.set_state(record.id, name, state)?;
            }
            if any_failed {
                outcome.failed += 1;
            } else {
                outcome.indexed += 1;
            }
        }
        Ok(outcome)
    }

    fn drop_vectors(&self, id: ImageId) -> Result<(), IngestError> {
        for info in self.store.collections() {
            self.store.remove(&info.name, id.0)?;
        }
        Ok(())
    }

    /// Vectors first, then the record.
    fn delete_image(&self, id: ImageId) -> Result<(), IngestError> {
        let _guard = self.stripe(id).lock();
        self.drop_vectors(id)?;
        self.catalog.remove_image(id)?;
        Ok(())
    }

    /// Records one on-disk file, returning how the catalog changed.
    fn record_file(&self, dir: DirectoryId, file: &ScannedFile) -> Result<UpsertChange, IngestError> {
        let candidate = ImageCandidate {
            directory_id: dir,
            relative_path: file.relative_path.clone(),
            content_hash: file.content_hash,
            byte_size: file.byte_size,
            mtime_ms: file.mtime_ms,
        };
        match self.catalog.image_by_path(dir, &file.relative_path)? {
            Some(existing) => {
                let _guard = self.stripe(existing.id).lock();
                Ok(self.catalog.upsert_image(&candidate)?.1)
            }
            None => Ok(self.catalog.upsert_image(&candidate)?.1),
        }
    }

    /// Diffs one directory against disk.
    fn sync_directory(
        &self,
        entry: &DirectoryEntry,
        report: &mut ReconcileReport,
    ) -> Result<(), IngestError> {
        let files = match scan_directory(&entry.path) {
            Ok(f) => f,
            Err(e) => {
                report.unreachable.push(UnreachableDirectory {
                    id: entry.id,
                    path: entry.path.clone(),
                    reason: e.to_string(),
                });
                return Ok(());
            }
        };
        let mut known: HashMap<String, ImageRecord> = self
            .catalog
            .images_in(entry.id)?
            .into_iter()
            .map(|r| (r.relative_path.clone(), r))
            .collect();
        for file in &files {
            match known.remove(&file.relative_path) {
                None => {
                    self.record_file(entry.id, file)?;
                    report.added += 1;
                }
                Some(r) if r.content_hash != file.content_hash => {
                    self.record_file(entry.id, file)?;
                    report.reembedded += 1;
                }
                Some(_) => {}
            }
        }
        for gone in known.into_values() {
            self.delete_image(gone.id)?;
            report.removed += 1;
        }
        Ok(())
    }

    fn reconcile(&self) -> Result<ReconcileReport, IngestError> {
        let _gate = self.gate.write();
        let mut report = ReconcileReport::default();
        let dirs = self.catalog.directories()?;
        for entry in dirs.iter().filter(|d| d.enabled) {
            self.sync_directory(entry, &mut report)?;
        }

        let mut owner: HashMap<u64, (DirectoryId, BTreeMap<String, IndexState>)> = HashMap::new();
        for entry in &dirs {
            for r in self.catalog.images_in(entry.id)? {
                owner.insert(r.id.0, (r.directory_id, r.index_state));
            }
        }
        let mut needs_work: HashSet<DirectoryId> = HashSet::new();
        for info in self.store.collections() {
            let live: HashSet<u64> = self.store.live_ids(&info.name)?.into_iter().collect();
            for &id in &live {
                if !owner.contains_key(&id) {
                    let _guard = self.stripe(ImageId(id)).lock();
                    if self.catalog.image(ImageId(id))?.is_none() {
                        self.store.remove(&info.name, id)?;
                        report.repaired += 1;
                    }
                }
            }
            for (&id, (dir, states)) in &owner {
                if states.get(&info.name) == Some(&IndexState::Indexed) && !live.contains(&id) {
                    let _guard = self.stripe(ImageId(id)).lock();
                    self.catalog
                        .set_state(ImageId(id), &info.name, IndexState::Pending)?;
                    report.repaired += 1;
                    needs_work.insert(*dir);
                }
            }
        }
        for (dir, states) in owner.values() {
            if states.values().any(|s| *s == IndexState::Pending) {
                needs_work.insert(*dir);
            }
        }
        for entry in dirs.iter().filter(|d| d.enabled && needs_work.contains(&d.id)) {
            self.queue.push(entry.id, PRIORITY_RECONCILE);
        }
        Ok(report)
    }

    /// Enabled directory containing `path`, preferring the deepest root.
    fn owning_directory(&self, path: &Path) -> Result<Option<DirectoryEntry>, IngestError> {
        Ok(self
            .catalog
            .directories()?
            .into_iter()
            .filter(|d| d.enabled && path.starts_with(&d.path) && path != d.path)
            .max_by_key(|d| d.path.components().count()))
    }

    fn handle_watch_event(&self, event: &WatchEvent) -> Result<(), IngestError> {
        let _gate = self.gate.read();
        let Some(dir) = self.owning_directory(&event.path)? else {
            log::debug!("ignoring event outside registered directories: {}", event.path.display());
            return Ok(());
        };
        let Some(rel) = scan::relative_key(&dir.path, &event.path) else {
            return Ok(());
        };
        match event.kind {
            WatchKind::Deleted => {
                let prefix = format!("{rel}/");
                for r in self.catalog.images_in(dir.id)? {
                    if r.relative_path == rel || r.relative_path.starts_with(&prefix) {
                        self.delete_image(r.id)?;
                    }
                }
            }
            WatchKind::Created | WatchKind::Modified => {
                let files = if event.path.is_dir() {
                    scan_directory(&event.path)?
                        .into_iter()
                        .map(|f| ScannedFile {
                            relative_path: format!("{rel}/{}", f.relative_path),
                            ..f
                        })
                        .collect()
                } else if is_image_path(&event.path) {
                    match scan::file_facts(&event.path) {
                        Ok((content_hash, byte_size, mtime_ms, _)) => vec![ScannedFile {
                            relative_path: rel,
                            absolute_path: event.path.clone(),
                            content_hash,
                            byte_size,
                            mtime_ms,
                        }],
                        Err(e) => {
                            log::debug!("cannot read {}: {e}", event.path.display());
                            Vec::new()
                        }
                    }
                } else {
                    Vec::new()
                };
                let mut changed = false;
                for f in &files {
                    changed |= self.record_file(dir.id, f)? != UpsertChange::Unchanged;
                }
                if changed {
                    self.queue.push(dir.id, PRIORITY_WATCH);
                }
            }
        }
        Ok(())
    }
}
