//! Guide-image generation with prioritized engine fallback.

mod remote;
mod scene;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64;

pub use remote::{RemoteEngine, DEFAULT_TIMEOUT_MS};
pub use scene::{
    mock_render, parse_pattern, parse_prompt, Color, Position, ScenePattern, SceneSpec, Shape,
};

use crate::limit::InFlight;
use crate::pixels::ImagePixels;

pub const DEFAULT_ENGINE_IN_FLIGHT: usize = 4;
/// Consecutive failed requests after which an engine is degraded.
pub const DEGRADE_AFTER: u32 = 3;
pub const DEGRADED_BACKOFF: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Resolution {
    Small,
    #[default]
    Medium,
    Large,
}

impl Resolution {
    pub fn side(self) -> u32 {
        match self {
            Resolution::Small => 256,
            Resolution::Medium => 512,
            Resolution::Large => 1024,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Resolution::Small => "SMALL",
            Resolution::Medium => "MEDIUM",
            Resolution::Large => "LARGE",
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Resolution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "SMALL" => Ok(Resolution::Small),
            "MEDIUM" => Ok(Resolution::Medium),
            "LARGE" => Ok(Resolution::Large),
            _ => Err(format!("unknown resolution `{s}` (SMALL|MEDIUM|LARGE)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenRequest {
    pub prompt: String,
    pub m: usize,
    pub resolution: Resolution,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct GuideImage {
    pub id: String,
    pub engine_name: String,
    pub seed: u64,
    pub pixels: ImagePixels,
    pub prompt_echo: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_in_flight: Option<usize>,
}

/// One entry of `generators.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSpec {
    pub name: String,
    pub kind: EngineKind,
    pub priority: i64,
    pub enabled: bool,
    #[serde(default)]
    pub params: EngineParams,
}

impl EngineSpec {
    pub fn mock(name: &str, priority: i64) -> Self {
        Self {
            name: name.into(),
            kind: EngineKind::Mock,
            priority,
            enabled: true,
            params: EngineParams::default(),
        }
    }

    pub fn remote(name: &str, priority: i64, endpoint: &str) -> Self {
        Self {
            name: name.into(),
            kind: EngineKind::Remote,
            priority,
            enabled: true,
            params: EngineParams {
                endpoint: Some(endpoint.into()),
                ..EngineParams::default()
            },
        }
    }
}

/// The shipped registry: the mock engine first, then disabled templates for
/// hosted and local model servers.
pub fn default_engine_specs() -> Vec<EngineSpec> {
    let mut specs = vec![EngineSpec::mock("mock", 0)];
    for (i, name) in ["local", "sd-turbo", "realvisxl", "imagen3-fast", "replicate", "dalle3"]
        .into_iter()
        .enumerate()
    {
        let mut spec = EngineSpec::remote(
            name,
            i as i64 + 1,
            &format!("http://127.0.0.1:7860/{name}/generate"),
        );
        spec.enabled = false;
        spec.params.timeout_ms = Some(DEFAULT_TIMEOUT_MS);
        specs.push(spec);
    }
    specs
}

/// Why one engine could not serve a request.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "kind", content = "detail")]
pub enum EngineFailure {
    #[error("timed out after {0} ms")]
    Timeout(u64),
    #[error("bad response: {0}")]
    BadResponse(String),
    #[error("http status {0}")]
    HttpError(u16),
    #[error("transport: {0}")]
    Transport(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EngineCause {
    pub engine: String,
    pub cause: EngineFailure,
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("no enabled generation engine")]
    NoEnabledEngines,
    #[error("all engines failed: {}", format_causes(.0))]
    AllEnginesFailed(Vec<EngineCause>),
    #[error("unknown engine `{0}`")]
    UnknownEngine(String),
    #[error("engine `{0}` is declared more than once")]
    DuplicateName(String),
    #[error("engine `{name}`: {reason}")]
    InvalidSpec { name: String, reason: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("stale revision {given}, current is {current}")]
    StaleRevision { given: u64, current: u64 },
    #[error("{path}:{line}:{column}: {msg}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn format_causes(causes: &[EngineCause]) -> String {
    causes
        .iter()
        .map(|c| format!("{}: {}", c.engine, c.cause))
        .collect::<Vec<_>>()
        .join("; ")
}

/// A source of guide rasters.
pub trait Engine: Send + Sync {
    fn name(&self) -> &str;

    /// Renders one image per seed, all at the request resolution.
    fn render(&self, request: &GenRequest, seeds: &[u64]) -> Result<Vec<ImagePixels>, EngineFailure>;
}

/// Procedural engine drawing the scene the prompt describes. Attributes the
/// prompt leaves open are drawn per guide from its seed; prompts outside the
/// grammar render their hash-derived scene.
pub struct MockEngine {
    name: String,
}

impl MockEngine {
    pub fn new(name: &str) -> Self {
        Self { name: name.into() }
    }

    pub fn scene_for(prompt: &str, seed: u64) -> SceneSpec {
        match parse_pattern(prompt) {
            Some(pattern) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(1);
                pattern.fill(&mut rng)
            }
            None => parse_prompt(prompt),
        }
    }
}

impl Engine for MockEngine {
    fn name(&self) -> &str {
        &self.name
    }

    fn render(&self, request: &GenRequest, seeds: &[u64]) -> Result<Vec<ImagePixels>, EngineFailure> {
        let side = request.resolution.side();
        Ok(seeds
            .iter()
            .map(|&seed| mock_render(&Self::scene_for(&request.prompt, seed), seed, side))
            .collect())
    }
}

#[derive(Debug, Default)]
struct HealthState {
    consecutive_failures: u32,
    degraded_at: Option<Instant>,
}

#[derive(Debug, Default)]
struct Health(Mutex<HealthState>);

impl Health {
    fn degraded(&self, now: Instant) -> bool {
        let s = self.0.lock();
        matches!(s.degraded_at, Some(t) if now.duration_since(t) < DEGRADED_BACKOFF)
    }

    fn record(&self, ok: bool) {
        let mut s = self.0.lock();
        if ok {
            *s = HealthState::default();
        } else {
            s.consecutive_failures += 1;
            if s.consecutive_failures >= DEGRADE_AFTER {
                s.degraded_at = Some(Instant::now());
            }
        }
    }
}

#[derive(Clone)]
struct Entry {
    spec: EngineSpec,
    engine: Arc<dyn Engine>,
    health: Arc<Health>,
    gate: Arc<InFlight>,
}

struct HubState {
    revision: u64,
    entries: Vec<Entry>,
    /// Engines supplied in code rather than built from their spec.
    injected: HashMap<String, Arc<dyn Engine>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EngineStatus {
    pub name: String,
    pub kind: EngineKind,
    pub priority: i64,
    pub enabled: bool,
    pub healthy: bool,
    pub consecutive_failures: u32,
}

/// A change to the engine registry.
#[derive(Debug, Clone)]
pub enum GenUpdate {
    /// Listed engines take priorities `0..n` in order; unlisted ones follow
    /// in their current order.
    Reorder(Vec<String>),
    SetEnabled(BTreeMap<String, bool>),
    Replace(Vec<EngineSpec>),
}

pub fn parse_engine_specs(text: &str, origin: &str) -> Result<Vec<EngineSpec>, GenError> {
    let specs: Vec<EngineSpec> = serde_json::from_str(text).map_err(|e| GenError::Parse {
        path: origin.into(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    validate_specs(&specs)?;
    Ok(specs)
}

pub fn render_engine_specs(specs: &[EngineSpec]) -> String {
    let mut s = serde_json::to_string_pretty(specs).expect("specs serialize");
    s.push('\n');
    s
}

fn validate_specs(specs: &[EngineSpec]) -> Result<(), GenError> {
    let mut seen = HashSet::new();
    for spec in specs {
        if spec.name.is_empty() {
            return Err(GenError::InvalidSpec {
                name: spec.name.clone(),
                reason: "empty name".into(),
            });
        }
        if !seen.insert(spec.name.as_str()) {
            return Err(GenError::DuplicateName(spec.name.clone()));
        }
        if spec.kind == EngineKind::Remote {
            match &spec.params.endpoint {
                Some(e) if e.starts_with("http://") || e.starts_with("https://") => {}
                _ => {
                    return Err(GenError::InvalidSpec {
                        name: spec.name.clone(),
                        reason: "remote engine needs an http(s) endpoint".into(),
                    })
                }
            }
        }
    }
    Ok(())
}

fn build_engine(spec: &EngineSpec) -> Arc<dyn Engine> {
    match spec.kind {
        EngineKind::Mock => Arc::new(MockEngine::new(&spec.name)),
        EngineKind::Remote => Arc::new(RemoteEngine::new(
            &spec.name,
            spec.params.endpoint.as_deref().unwrap_or_default(),
            spec.params.timeout_ms.unwrap_or(DEFAULT_TIMEOUT_MS),
        )),
    }
}

fn by_priority(a: &EngineSpec, b: &EngineSpec) -> std::cmp::Ordering {
    (a.priority, &a.name).cmp(&(b.priority, &b.name))
}

/// Engine registry with health tracking and transparent fallback.
pub struct GenHub {
    state: RwLock<HubState>,
    config_path: Option<PathBuf>,
}

impl GenHub {
    pub fn new(specs: Vec<EngineSpec>) -> Result<Self, GenError> {
        Self::with_engines(specs, HashMap::new())
    }

    /// Like [`GenHub::new`], but engines named in `injected` use the given
    /// implementation instead of the one their kind implies.
    pub fn with_engines(
        specs: Vec<EngineSpec>,
        injected: HashMap<String, Arc<dyn Engine>>,
    ) -> Result<Self, GenError> {
        let mut state = HubState {
            revision: 1,
            entries: Vec::new(),
            injected,
        };
        Self::install(&mut state, specs)?;
        Ok(Self {
            state: RwLock::new(state),
            config_path: None,
        })
    }

    /// Loads `generators.json`, writing the shipped defaults when absent.
    /// Later updates are persisted back to the same file.
    pub fn load(path: &Path) -> Result<Self, GenError> {
        if !path.exists() {
            write_atomic(path, &render_engine_specs(&default_engine_specs()))?;
        }
        let text = std::fs::read_to_string(path)?;
        let specs = parse_engine_specs(&text, &path.display().to_string())?;
        let mut hub = Self::new(specs)?;
        hub.config_path = Some(path.to_path_buf());
        Ok(hub)
    }

    fn install(state: &mut HubState, mut specs: Vec<EngineSpec>) -> Result<(), GenError> {
        validate_specs(&specs)?;
        specs.sort_by(by_priority);
        let old: HashMap<String, Entry> = state
            .entries
            .drain(..)
            .map(|e| (e.spec.name.clone(), e))
            .collect();
        state.entries = specs
            .into_iter()
            .map(|spec| {
                let prior = old.get(&spec.name);
                let engine = match (state.injected.get(&spec.name), prior) {
                    (Some(e), _) => e.clone(),
                    (None, Some(p)) if p.spec.kind == spec.kind && p.spec.params == spec.params => {
                        p.engine.clone()
                    }
                    _ => build_engine(&spec),
                };
                let cap = spec.params.max_in_flight.unwrap_or(DEFAULT_ENGINE_IN_FLIGHT);
                Entry {
                    health: prior.map(|p| p.health.clone()).unwrap_or_default(),
                    gate: Arc::new(InFlight::new(cap)),
                    engine,
                    spec,
                }
            })
            .collect();
        Ok(())
    }

    pub fn revision(&self) -> u64 {
        self.state.read().revision
    }

    /// Specs ordered by `(priority, name)`.
    pub fn specs(&self) -> Vec<EngineSpec> {
        self.state.read().entries.iter().map(|e| e.spec.clone()).collect()
    }

    pub fn status(&self) -> Vec<EngineStatus> {
        let now = Instant::now();
        self.state
            .read()
            .entries
            .iter()
            .map(|e| EngineStatus {
                name: e.spec.name.clone(),
                kind: e.spec.kind,
                priority: e.spec.priority,
                enabled: e.spec.enabled,
                healthy: !e.health.degraded(now),
                consecutive_failures: e.health.0.lock().consecutive_failures,
            })
            .collect()
    }

    /// Applies `change` if `expected_revision` is current (or not given) and
    /// returns the new revision. The registry is untouched on error.
    pub fn update(&self, expected_revision: Option<u64>, change: GenUpdate) -> Result<u64, GenError> {
        let mut state = self.state.write();
        if let Some(given) = expected_revision {
            if given != state.revision {
                return Err(GenError::StaleRevision {
                    given,
                    current: state.revision,
                });
            }
        }
        let mut specs: Vec<EngineSpec> = state.entries.iter().map(|e| e.spec.clone()).collect();
        let known = |name: &str, specs: &[EngineSpec]| specs.iter().any(|s| s.name == name);
        match change {
            GenUpdate::Reorder(names) => {
                let mut seen = HashSet::new();
                for n in &names {
                    if !known(n, &specs) {
                        return Err(GenError::UnknownEngine(n.clone()));
                    }
                    if !seen.insert(n.as_str()) {
                        return Err(GenError::DuplicateName(n.clone()));
                    }
                }
                let rest: Vec<String> = specs
                    .iter()
                    .map(|s| s.name.clone())
                    .filter(|n| !seen.contains(n.as_str()))
                    .collect();
                for (priority, name) in names.iter().chain(&rest).enumerate() {
                    let spec = specs.iter_mut().find(|s| &s.name == name).expect("known");
                    spec.priority = priority as i64;
                }
            }
            GenUpdate::SetEnabled(flags) => {
                for (name, enabled) in &flags {
                    match specs.iter_mut().find(|s| &s.name == name) {
                        Some(spec) => spec.enabled = *enabled,
                        None => return Err(GenError::UnknownEngine(name.clone())),
                    }
                }
            }
            GenUpdate::Replace(new_specs) => specs = new_specs,
        }
        validate_specs(&specs)?;
        if let Some(path) = &self.config_path {
            let mut sorted = specs.clone();
            sorted.sort_by(by_priority);
            write_atomic(path, &render_engine_specs(&sorted))?;
        }
        Self::install(&mut state, specs)?;
        state.revision += 1;
        Ok(state.revision)
    }

    /// Produces `request.m` guides from the first engine, in `(priority,
    /// name)` order, that serves the whole request. Degraded engines are
    /// tried after healthy ones. `only` restricts the candidates by name.
    pub fn generate(
        &self,
        request: &GenRequest,
        only: Option<&[String]>,
    ) -> Result<Vec<GuideImage>, GenError> {
        if request.m == 0 {
            return Err(GenError::InvalidRequest("m must be at least 1".into()));
        }
        let candidates: Vec<Entry> = {
            let state = self.state.read();
            if let Some(names) = only {
                if let Some(missing) = names.iter().find(|n| !state.entries.iter().any(|e| &e.spec.name == *n)) {
                    return Err(GenError::UnknownEngine(missing.clone()));
                }
            }
            state
                .entries
                .iter()
                .filter(|e| e.spec.enabled)
                .filter(|e| only.map_or(true, |names| names.contains(&e.spec.name)))
                .cloned()
                .collect()
        };
        if candidates.is_empty() {
            return Err(GenError::NoEnabledEngines);
        }
        let now = Instant::now();
        let (healthy, degraded): (Vec<Entry>, Vec<Entry>) =
            candidates.into_iter().partition(|e| !e.health.degraded(now));

        let base = request.seed.unwrap_or_else(|| u64::from(rand::random::<u32>()));
        let seeds: Vec<u64> = (0..request.m as u64).map(|i| base.wrapping_add(i)).collect();
        let mut causes = Vec::new();
        for entry in healthy.iter().chain(&degraded) {
            let result = {
                let _permit = entry.gate.acquire();
                entry.engine.render(request, &seeds)
            };
            let result = result.and_then(|images| {
                let side = request.resolution.side();
                if images.len() != request.m {
                    Err(EngineFailure::BadResponse(format!(
                        "expected {} images, got {}",
                        request.m,
                        images.len()
                    )))
                } else if images.iter().any(|i| i.width() != side || i.height() != side) {
                    Err(EngineFailure::BadResponse("image size differs from resolution".into()))
                } else {
                    Ok(images)
                }
            });
            entry.health.record(result.is_ok());
            match result {
                Ok(images) => {
                    let name = &entry.spec.name;
                    return Ok(images
                        .into_iter()
                        .zip(&seeds)
                        .map(|(pixels, &seed)| GuideImage {
                            id: guide_id(name, seed, request),
                            engine_name: name.clone(),
                            seed,
                            pixels,
                            prompt_echo: request.prompt.clone(),
                        })
                        .collect());
                }
                Err(cause) => {
                    log::warn!("engine {} failed: {cause}", entry.spec.name);
                    causes.push(EngineCause {
                        engine: entry.spec.name.clone(),
                        cause,
                    });
                }
            }
        }
        Err(GenError::AllEnginesFailed(causes))
    }
}

fn guide_id(engine: &str, seed: u64, request: &GenRequest) -> String {
    let key = format!(
        "{engine}\u{1f}{seed}\u{1f}{}\u{1f}{}",
        request.resolution.side(),
        request.prompt
    );
    format!("{:016x}", xxh3_64(key.as_bytes()))
}

pub(crate) fn write_atomic(path: &Path, text: &str) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Failing;

    impl Engine for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn render(&self, _: &GenRequest, _: &[u64]) -> Result<Vec<ImagePixels>, EngineFailure> {
            Err(EngineFailure::HttpError(500))
        }
    }

    fn request(m: usize, seed: Option<u64>) -> GenRequest {
        GenRequest {
            prompt: "a red circle on a blue background".into(),
            m,
            resolution: Resolution::Small,
            seed,
        }
    }

    fn hub_with_failing_first() -> GenHub {
        let mut injected: HashMap<String, Arc<dyn Engine>> = HashMap::new();
        injected.insert("a".into(), Arc::new(Failing));
        GenHub::with_engines(vec![EngineSpec::mock("a", 0), EngineSpec::mock("b", 1)], injected).unwrap()
    }

    #[test]
    fn falls_back_to_next_engine() {
        let hub = hub_with_failing_first();
        let guides = hub.generate(&request(3, Some(7)), None).unwrap();
        assert_eq!(guides.len(), 3);
        assert!(guides.iter().all(|g| g.engine_name == "b"));
        assert_eq!(guides.iter().map(|g| g.seed).collect::<Vec<_>>(), [7, 8, 9]);
        let again = hub.generate(&request(3, Some(7)), None).unwrap();
        for (x, y) in guides.iter().zip(&again) {
            assert_eq!(x.pixels, y.pixels);
            assert_eq!(x.id, y.id);
        }
        assert_eq!(guides[0].pixels.width(), 256);
    }

    #[test]
    fn degraded_engine_moves_last() {
        let hub = hub_with_failing_first();
        for _ in 0..DEGRADE_AFTER {
            hub.generate(&request(1, Some(1)), None).unwrap();
        }
        let status = hub.status();
        assert!(!status[0].healthy && status[1].healthy);
        // the degraded engine is still tried, after the healthy one
        hub.update(None, GenUpdate::SetEnabled([("b".to_string(), false)].into()))
            .unwrap();
        match hub.generate(&request(1, Some(1)), None) {
            Err(GenError::AllEnginesFailed(c)) => {
                assert_eq!(c, vec![EngineCause { engine: "a".into(), cause: EngineFailure::HttpError(500) }])
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn no_enabled_engines() {
        let mut spec = EngineSpec::mock("only", 0);
        spec.enabled = false;
        let hub = GenHub::new(vec![spec]).unwrap();
        assert!(matches!(hub.generate(&request(1, None), None), Err(GenError::NoEnabledEngines)));
    }

    #[test]
    fn reorder_and_revisions() {
        let hub = GenHub::new(vec![EngineSpec::mock("a", 0), EngineSpec::mock("b", 1)]).unwrap();
        let r = hub.revision();
        let next = hub.update(Some(r), GenUpdate::Reorder(vec!["b".into(), "a".into()])).unwrap();
        assert_eq!(hub.specs()[0].name, "b");
        assert_eq!(hub.specs()[0].priority, 0);
        assert!(matches!(
            hub.update(Some(r), GenUpdate::Reorder(vec!["a".into()])),
            Err(GenError::StaleRevision { .. })
        ));
        assert!(matches!(
            hub.update(Some(next), GenUpdate::Reorder(vec!["zzz".into()])),
            Err(GenError::UnknownEngine(_))
        ));
        assert_eq!(hub.revision(), next);
        assert_eq!(hub.specs()[0].name, "b");
    }

    #[test]
    fn ties_break_by_name() {
        let hub = GenHub::new(vec![EngineSpec::mock("zeta", 0), EngineSpec::mock("alpha", 0)]).unwrap();
        let g = hub.generate(&request(1, Some(0)), None).unwrap();
        assert_eq!(g[0].engine_name, "alpha");
        let g = hub.generate(&request(1, Some(0)), Some(&["zeta".to_string()])).unwrap();
        assert_eq!(g[0].engine_name, "zeta");
    }

    #[test]
    fn load_writes_defaults_and_persists_updates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("generators.json");
        let hub = GenHub::load(&path).unwrap();
        assert_eq!(hub.specs().len(), 7);
        hub.update(None, GenUpdate::Reorder(vec!["local".into()])).unwrap();
        let reloaded = GenHub::load(&path).unwrap();
        assert_eq!(reloaded.specs()[0].name, "local");
        assert_eq!(reloaded.specs()[1].name, "mock");
        let bad = r#"[{"name": "x", "kind": "mock", "priority": 0, "enabled": true, "extra": 1}]"#;
        assert!(matches!(parse_engine_specs(bad, "g"), Err(GenError::Parse { line: 1, .. })));
    }

    #[test]
    fn open_attributes_vary_per_guide() {
        let scenes: HashSet<SceneSpec> = (0..40)
            .map(|seed| MockEngine::scene_for("something on a blue background", seed))
            .collect();
        assert!(scenes.len() > 5);
        assert!(scenes.iter().all(|s| s.background == Color::Blue && s.position == Position::Center));
    }
}
