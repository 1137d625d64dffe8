//! Service state shared by every request: stores, generator hub, indexer and
//! the background flush loop.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use needle_core::catalog::{Catalog, CatalogError, DirectoryEntry, DirectoryId, ImageId};
use needle_core::config::{backend_versions, ConfigError, Mode, Paths};
use needle_core::embedders::{render_registry, EmbedderError, EmbedderSet};
use needle_core::fusion::{run_query, FusionError, QueryDeps, QueryPlan};
use needle_core::genhub::{GenError, GenHub, GenUpdate, GuideImage};
use needle_core::ingest::{IngestConfig, IngestError, Indexer, ReconcileReport};
use needle_core::pixels::ImagePixels;
use needle_core::vecstore::{HnswParams, VecStoreError, VectorStore};
use parking_lot::Mutex;
use thiserror::Error;

use crate::wire::{
    round_sig, DirectoryView, GeneratorView, Generators, GuideRef, PatchGenerators, PlanEcho,
    QueryRequest, QueryResponse, ResultItem, ServiceState, SourceHit, SourceList, StageTimings,
    StatusReport,
};

const GUIDE_CACHE: usize = 64;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Store(#[from] VecStoreError),
    #[error(transparent)]
    Embedder(#[from] EmbedderError),
    #[error(transparent)]
    Generator(#[from] GenError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Query(#[from] FusionError),
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct BackendOptions {
    /// Mode recorded on first start; later starts keep the recorded one.
    pub mode: Mode,
    pub ingest: IngestConfig,
    pub flush_every: Duration,
    pub query_limit: usize,
    /// Enables `POST /v1/faults`.
    pub fault_injection: bool,
}

impl Default for BackendOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Fast,
            ingest: IngestConfig::default(),
            flush_every: Duration::from_secs(5),
            query_limit: 8,
            fault_injection: false,
        }
    }
}

impl BackendOptions {
    /// Reads NEEDLE_MODE, NEEDLE_QUERY_CONCURRENCY, NEEDLE_FAULT_INJECTION
    /// and the ingest keys.
    pub fn from_env() -> Result<Self, BackendError> {
        let mut options = Self {
            ingest: IngestConfig::from_env()?,
            fault_injection: std::env::var("NEEDLE_FAULT_INJECTION").is_ok_and(|v| v == "1"),
            ..Self::default()
        };
        if let Ok(mode) = std::env::var("NEEDLE_MODE") {
            options.mode = mode.parse()?;
        }
        if let Ok(limit) = std::env::var("NEEDLE_QUERY_CONCURRENCY") {
            options.query_limit = limit
                .parse()
                .ok()
                .filter(|&n: &usize| n > 0)
                .ok_or_else(|| BackendError::BadRequest(format!("NEEDLE_QUERY_CONCURRENCY={limit:?}")))?;
        }
        Ok(options)
    }
}

/// Periodically persists the vector store's graph snapshots.
pub struct FlushService {
    stop: Mutex<Option<Sender<()>>>,
    thread: Mutex<Option<JoinHandle<()>>>,
    alive: Arc<AtomicBool>,
}

impl FlushService {
    fn start(store: VectorStore, every: Duration) -> Self {
        let (tx, rx) = channel::<()>();
        let alive = Arc::new(AtomicBool::new(true));
        let flag = Arc::clone(&alive);
        let thread = std::thread::Builder::new()
            .name("needle-flush".into())
            .spawn(move || {
                while let Err(RecvTimeoutError::Timeout) = rx.recv_timeout(every) {
                    if let Err(e) = store.flush() {
                        log::warn!("vector store flush failed: {e}");
                    }
                }
                flag.store(false, Ordering::SeqCst);
            })
            .expect("spawn flush thread");
        Self {
            stop: Mutex::new(Some(tx)),
            thread: Mutex::new(Some(thread)),
            alive,
        }
    }

    pub fn is_running(&self) -> bool {
        self.alive.load(Ordering::SeqCst)
    }

    pub fn stop(&self) {
        self.stop.lock().take();
        if let Some(t) = self.thread.lock().take() {
            let _ = t.join();
        }
    }
}

/// Recently generated guides, served by id.
#[derive(Default)]
struct GuideCache {
    entries: Mutex<VecDeque<(String, Arc<ImagePixels>)>>,
}

impl GuideCache {
    fn put(&self, guide: &GuideImage) {
        let mut entries = self.entries.lock();
        if entries.iter().any(|(id, _)| id == &guide.id) {
            return;
        }
        if entries.len() == GUIDE_CACHE {
            entries.pop_front();
        }
        entries.push_back((guide.id.clone(), Arc::new(guide.pixels.clone())));
    }

    fn get(&self, id: &str) -> Option<Arc<ImagePixels>> {
        self.entries
            .lock()
            .iter()
            .find(|(k, _)| k == id)
            .map(|(_, px)| Arc::clone(px))
    }
}

/// Bytes and media type of an image served by id.
pub struct ImageBytes {
    pub content_type: &'static str,
    pub bytes: Vec<u8>,
}

pub struct Backend {
    paths: Paths,
    mode: Mode,
    catalog: Arc<Catalog>,
    store: VectorStore,
    genhub: GenHub,
    indexer: Indexer,
    guides: GuideCache,
    flush: FlushService,
    query_limit: usize,
    fault_injection: bool,
}

impl Backend {
    /// Opens (creating on first use) everything under `paths`. Indexing
    /// threads are not started; see [`Backend::start_indexing`].
    pub fn open(paths: Paths, options: BackendOptions) -> Result<Self, BackendError> {
        std::fs::create_dir_all(&paths.home)?;
        std::fs::create_dir_all(&paths.data)?;
        let mode = paths.mode_or_init(options.mode)?;
        let registry = paths.embedders();
        if !registry.exists() {
            std::fs::write(&registry, render_registry(&mode.embedders()))?;
        }
        let embedders = EmbedderSet::load(&registry)?;
        let store = VectorStore::open(&paths.vectors())?;
        embedders.attach(&store, HnswParams::default())?;
        let catalog = Arc::new(Catalog::open(&paths.catalog())?);
        let genhub = GenHub::load(&paths.generators())?;
        let indexer = Indexer::new(Arc::clone(&catalog), store.clone(), embedders, options.ingest)?;
        let flush = FlushService::start(store.clone(), options.flush_every);
        Ok(Self {
            paths,
            mode,
            catalog,
            store,
            genhub,
            indexer,
            guides: GuideCache::default(),
            flush,
            query_limit: options.query_limit,
            fault_injection: options.fault_injection,
        })
    }

    /// Reconciles with disk, then starts workers, watcher and reconciler.
    pub fn start_indexing(&self) -> Result<ReconcileReport, BackendError> {
        Ok(self.indexer.start()?)
    }

    pub fn shutdown(&self) {
        self.indexer.shutdown();
        self.flush.stop();
        if let Err(e) = self.store.flush() {
            log::warn!("final flush failed: {e}");
        }
    }

    pub fn paths(&self) -> &Paths {
        &self.paths
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn store(&self) -> &VectorStore {
        &self.store
    }

    pub fn genhub(&self) -> &GenHub {
        &self.genhub
    }

    pub fn indexer(&self) -> &Indexer {
        &self.indexer
    }

    pub fn flush_service(&self) -> &FlushService {
        &self.flush
    }

    pub fn query_limit(&self) -> usize {
        self.query_limit
    }

    pub fn fault_injection(&self) -> bool {
        self.fault_injection
    }

    pub fn query(&self, req: &QueryRequest) -> Result<QueryResponse, BackendError> {
        if req.prompt.trim().is_empty() {
            return Err(BackendError::BadRequest("prompt must not be empty".into()));
        }
        if req.n == 0 {
            return Err(BackendError::BadRequest("n must be at least 1".into()));
        }
        let overrides = req.overrides.clone().unwrap_or_default();
        let mut plan = QueryPlan::new(overrides.m.unwrap_or(self.mode.guides()), req.n);
        plan.resolution = overrides.resolution.unwrap_or(self.mode.resolution());
        plan.engines = overrides.engines;
        plan.seed = req.seed;
        let deps = QueryDeps {
            genhub: &self.genhub,
            embedders: self.indexer.embedders(),
            store: &self.store,
        };
        let result = run_query(&req.prompt, &plan, &deps)?;

        for g in &result.guides {
            self.guides.put(&g.guide);
        }
        let mut results = Vec::with_capacity(result.results.len());
        for r in &result.results {
            // vectors of an image deleted mid-query are skipped
            if let Some(path) = self.catalog.image_path(ImageId(r.id))? {
                results.push(ResultItem {
                    rank: results.len() + 1,
                    image_id: r.id,
                    path: path.to_string_lossy().into_owned(),
                    score: round_sig(r.score),
                    url: format!("/v1/images/{}", r.id),
                });
            }
        }
        let guides: Vec<GuideRef> = result
            .guides
            .iter()
            .map(|g| GuideRef {
                id: g.guide.id.clone(),
                engine_name: g.guide.engine_name.clone(),
                seed: g.guide.seed,
                kept: g.kept,
                mean_lof: g.mean_lof.map(round_sig),
                url: format!("/v1/images/{}", g.guide.id),
            })
            .collect();
        let mut paths: HashMap<u64, Option<String>> = HashMap::new();
        let mut sources = Vec::with_capacity(result.sources.len());
        for s in &result.sources {
            let mut hits = Vec::with_capacity(s.hits.len());
            for (i, h) in s.hits.iter().enumerate() {
                let path = match paths.get(&h.id) {
                    Some(p) => p.clone(),
                    None => {
                        let p = self
                            .catalog
                            .image_path(ImageId(h.id))?
                            .map(|p| p.to_string_lossy().into_owned());
                        paths.insert(h.id, p.clone());
                        p
                    }
                };
                hits.push(SourceHit {
                    rank: i + 1,
                    image_id: h.id,
                    path,
                    distance: h.distance,
                });
            }
            sources.push(SourceList {
                guide_index: s.guide_index,
                guide_id: guides[s.guide_index].id.clone(),
                embedder: s.embedder.clone(),
                dropped: !guides[s.guide_index].kept,
                hits,
            });
        }
        let t = result.timings;
        Ok(QueryResponse {
            prompt: req.prompt.clone(),
            results,
            guides,
            sources,
            timings: StageTimings {
                generate_ms: t.generate_ms,
                search_ms: t.search_ms,
                fuse_ms: t.fuse_ms,
                total_ms: t.total_ms,
            },
            plan: PlanEcho {
                m: plan.m,
                l: self.indexer.embedders().enabled().len(),
                k: plan.k,
                kappa: plan.kappa,
                resolution: plan.resolution,
            },
        })
    }

    fn directory_view(&self, entry: &DirectoryEntry) -> Result<DirectoryView, BackendError> {
        let p = self.catalog.progress(entry.id)?;
        Ok(DirectoryView {
            id: entry.id.0,
            path: entry.path.to_string_lossy().into_owned(),
            enabled: entry.enabled,
            created_at_ms: entry.created_at_ms,
            image_count: entry.image_count,
            done: p.done,
            total: p.total,
            progress: p.ratio(),
        })
    }

    pub fn add_directory(&self, path: &str) -> Result<DirectoryView, BackendError> {
        let path = Path::new(path);
        if !path.is_absolute() {
            return Err(BackendError::BadRequest(format!(
                "path must be absolute: {}",
                path.display()
            )));
        }
        let entry = self.indexer.add_directory(path)?;
        self.directory_view(&entry)
    }

    pub fn directories(&self) -> Result<Vec<DirectoryView>, BackendError> {
        self.catalog
            .directories()?
            .iter()
            .map(|d| self.directory_view(d))
            .collect()
    }

    pub fn directory(&self, id: i64) -> Result<DirectoryView, BackendError> {
        let entry = self
            .catalog
            .directory(DirectoryId(id))?
            .ok_or(CatalogError::UnknownDirectory(id))?;
        self.directory_view(&entry)
    }

    pub fn set_directory_enabled(&self, id: i64, enabled: bool) -> Result<DirectoryView, BackendError> {
        let entry = self.indexer.set_directory_enabled(DirectoryId(id), enabled)?;
        self.directory_view(&entry)
    }

    pub fn remove_directory(&self, id: i64) -> Result<(), BackendError> {
        Ok(self.indexer.remove_directory(DirectoryId(id))?)
    }

    pub fn generators(&self) -> Generators {
        let mut engines: Vec<GeneratorView> = self
            .genhub
            .status()
            .into_iter()
            .map(|s| GeneratorView {
                name: s.name,
                kind: format!("{:?}", s.kind).to_lowercase(),
                priority: s.priority,
                enabled: s.enabled,
                healthy: s.healthy,
                consecutive_failures: s.consecutive_failures,
            })
            .collect();
        engines.sort_by(|a, b| a.priority.cmp(&b.priority).then_with(|| a.name.cmp(&b.name)));
        Generators {
            revision: self.genhub.revision(),
            engines,
        }
    }

    /// Applies reorder and enable changes as one revision.
    pub fn patch_generators(&self, patch: &PatchGenerators) -> Result<Generators, BackendError> {
        if patch.ordered_names.is_none() && patch.per_engine.is_none() {
            return Err(BackendError::BadRequest(
                "expected orderedNames or perEngine".into(),
            ));
        }
        let mut specs = self.genhub.specs();
        let known = |name: &str| specs.iter().any(|s| s.name == name);
        if let Some(names) = &patch.ordered_names {
            if let Some(bad) = names.iter().find(|n| !known(n)) {
                return Err(GenError::UnknownEngine(bad.clone()).into());
            }
        }
        if let Some(flags) = &patch.per_engine {
            if let Some(bad) = flags.keys().find(|n| !known(n)) {
                return Err(GenError::UnknownEngine(bad.clone()).into());
            }
        }
        if let Some(names) = &patch.ordered_names {
            let mut seen = HashSet::new();
            if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
                return Err(GenError::DuplicateName(dup.clone()).into());
            }
            specs.sort_by(|a, b| a.priority.cmp(&b.priority).then_with(|| a.name.cmp(&b.name)));
            let rest = specs.iter().map(|s| &s.name).filter(|n| !seen.contains(n.as_str()));
            let order: Vec<String> = names.iter().chain(rest).cloned().collect();
            for s in &mut specs {
                s.priority = order.iter().position(|n| n == &s.name).expect("known") as i64;
            }
        }
        if let Some(flags) = &patch.per_engine {
            for s in &mut specs {
                if let Some(f) = flags.get(&s.name) {
                    s.enabled = f.enabled;
                }
            }
        }
        self.genhub.update(patch.revision, GenUpdate::Replace(specs))?;
        Ok(self.generators())
    }

    pub fn status(&self) -> StatusReport {
        let up = |ok: bool| if ok { ServiceState::Up } else { ServiceState::Down };
        let generators = self.generators();
        let services = BTreeMap::from([
            ("api".to_string(), ServiceState::Up),
            ("catalog".to_string(), up(self.catalog.image_count().is_ok())),
            ("vecstore".to_string(), up(self.flush.is_running())),
            ("indexer".to_string(), up(self.indexer.is_running())),
            (
                "genhub".to_string(),
                up(generators.engines.iter().any(|e| e.enabled && e.healthy)),
            ),
        ]);
        StatusReport {
            api_healthy: true,
            mode: self.mode.to_string(),
            services,
            directories: self.directories().unwrap_or_default(),
            generators: generators.engines,
            versions: backend_versions(),
        }
    }

    /// A cached guide (hex id) or a catalogued image (numeric id).
    pub fn image(&self, id: &str) -> Result<Option<ImageBytes>, BackendError> {
        if let Some(px) = self.guides.get(id) {
            let bytes = px
                .to_png()
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))?;
            return Ok(Some(ImageBytes {
                content_type: "image/png",
                bytes,
            }));
        }
        let Ok(num) = id.parse::<u64>() else {
            return Ok(None);
        };
        let Some(path) = self.catalog.image_path(ImageId(num))? else {
            return Ok(None);
        };
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        Ok(Some(ImageBytes {
            content_type: media_type(&path),
            bytes,
        }))
    }

    /// Engine names for 503 bodies when nothing could be tried.
    pub fn disabled_engines(&self) -> Vec<String> {
        self.genhub
            .specs()
            .into_iter()
            .filter(|s| !s.enabled)
            .map(|s| s.name)
            .collect()
    }
}

fn media_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    }
}

/// Listen address from NEEDLE_API_ADDR, default 127.0.0.1:8461.
pub fn api_addr_from_env() -> String {
    std::env::var("NEEDLE_API_ADDR").unwrap_or_else(|_| crate::DEFAULT_API_ADDR.to_string())
}
