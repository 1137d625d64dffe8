//! Embedder registry, the batch-embedding seam and the builtin embedders.

mod builtin;
mod remote;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use builtin::{color_histogram64, edge_orientation36, grid_intensity64};
pub use remote::RemoteEmbedder;

use crate::pixels::ImagePixels;
use crate::vecstore::{HnswParams, VecStoreError, VectorStore};

/// Images per embedding call used by the indexer.
pub const DEFAULT_BATCH_LIMIT: usize = 50;
/// Concurrent requests one remote embedder keeps open.
pub const DEFAULT_REMOTE_IN_FLIGHT: usize = 2;

#[derive(Debug, Error)]
pub enum EmbedderError {
    #[error("{path}:{line}:{column}: {msg}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("embedder `{0}` is declared more than once")]
    DuplicateName(String),
    #[error("embedder `{name}`: {reason}")]
    InvalidSpec { name: String, reason: String },
    #[error("embedder `{name}` declares dim {configured} but its collection holds dim {existing}")]
    DimMismatchWithExistingCollection {
        name: String,
        existing: usize,
        configured: usize,
    },
    #[error("batch of {len} images exceeds the limit of {limit}")]
    BatchTooLarge { len: usize, limit: usize },
    #[error("embedder `{name}` unavailable: {reason}")]
    EmbedderUnavailable { name: String, reason: String },
    #[error(transparent)]
    VecStore(#[from] VecStoreError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EmbedderError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    ColorHist64,
    Grid64,
    Edge36,
}

impl Builtin {
    pub const ALL: [Builtin; 3] = [Builtin::ColorHist64, Builtin::Grid64, Builtin::Edge36];

    pub fn tag(self) -> &'static str {
        match self {
            Builtin::ColorHist64 => "colorhist64",
            Builtin::Grid64 => "grid64",
            Builtin::Edge36 => "edge36",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Builtin::ColorHist64 | Builtin::Grid64 => 64,
            Builtin::Edge36 => 36,
        }
    }

    pub fn embed(self, image: &ImagePixels) -> Vec<f32> {
        match self {
            Builtin::ColorHist64 => color_histogram64(image),
            Builtin::Grid64 => grid_intensity64(image),
            Builtin::Edge36 => edge_orientation36(image),
        }
    }
}

/// Where an embedder's vectors come from. Serialized as `builtin:<tag>` or
/// `remote:<url>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelRef {
    Builtin(Builtin),
    Remote(String),
}

impl fmt::Display for ModelRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelRef::Builtin(b) => write!(f, "builtin:{}", b.tag()),
            ModelRef::Remote(url) => write!(f, "remote:{url}"),
        }
    }
}

impl FromStr for ModelRef {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Some(tag) = s.strip_prefix("builtin:") {
            return Builtin::ALL
                .into_iter()
                .find(|b| b.tag() == tag)
                .map(ModelRef::Builtin)
                .ok_or_else(|| format!("unknown builtin embedder `{tag}`"));
        }
        match s.strip_prefix("remote:") {
            Some(url) if url.starts_with("http://") || url.starts_with("https://") => {
                Ok(ModelRef::Remote(url.to_string()))
            }
            Some(url) => Err(format!("remote url `{url}` must be http(s)")),
            None => Err(format!(
                "model `{s}` must start with `builtin:` or `remote:`"
            )),
        }
    }
}

impl Serialize for ModelRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One entry of `embedders.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderSpec {
    pub name: String,
    pub model: ModelRef,
    pub dim: usize,
    pub weight: f64,
    pub enabled: bool,
}

impl EmbedderSpec {
    pub fn builtin(kind: Builtin, weight: f64) -> Self {
        Self {
            name: kind.tag().to_string(),
            model: ModelRef::Builtin(kind),
            dim: kind.dim(),
            weight,
            enabled: true,
        }
    }

    fn validate(&self) -> Result<()> {
        let invalid = |reason: String| EmbedderError::InvalidSpec {
            name: self.name.clone(),
            reason,
        };
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        {
            return Err(invalid("name must be non-empty [A-Za-z0-9._-]".into()));
        }
        if self.dim == 0 {
            return Err(invalid("dim must be positive".into()));
        }
        if !self.weight.is_finite() || self.weight < 0.0 {
            return Err(invalid(format!("weight {} must be finite and >= 0", self.weight)));
        }
        if let ModelRef::Builtin(b) = self.model {
            if b.dim() != self.dim {
                return Err(invalid(format!(
                    "builtin:{} emits dim {}, not {}",
                    b.tag(),
                    b.dim(),
                    self.dim
                )));
            }
        }
        Ok(())
    }
}

/// Parses and validates a registry document.
pub fn parse_registry(text: &str, origin: &str) -> Result<Vec<EmbedderSpec>> {
    let specs: Vec<EmbedderSpec> =
        serde_json::from_str(text).map_err(|e| EmbedderError::Parse {
            path: origin.to_string(),
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
    let mut seen = HashSet::new();
    for spec in &specs {
        if !seen.insert(spec.name.as_str()) {
            return Err(EmbedderError::DuplicateName(spec.name.clone()));
        }
        spec.validate()?;
    }
    Ok(specs)
}

pub fn load_registry(path: &Path) -> Result<Vec<EmbedderSpec>> {
    let text = std::fs::read_to_string(path)?;
    parse_registry(&text, &path.display().to_string())
}

pub fn render_registry(specs: &[EmbedderSpec]) -> String {
    let mut s = serde_json::to_string_pretty(specs).expect("specs serialize");
    s.push('\n');
    s
}

/// An embedder ready to produce vectors.
pub trait Embedder: Send + Sync {
    fn spec(&self) -> &EmbedderSpec;

    /// Embeds a batch already checked against the batch limit.
    fn embed_unchecked(&self, images: &[ImagePixels]) -> Result<Vec<Vec<f32>>>;
}

struct BuiltinEmbedder {
    spec: EmbedderSpec,
    kind: Builtin,
}

impl Embedder for BuiltinEmbedder {
    fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    fn embed_unchecked(&self, images: &[ImagePixels]) -> Result<Vec<Vec<f32>>> {
        Ok(images.iter().map(|img| self.kind.embed(img)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub embedder_name: String,
    pub vector: Vec<f32>,
}

/// Embeds up to `batch_limit` images in one call, positionally aligned with
/// the input.
pub fn embed_batch(
    embedder: &dyn Embedder,
    images: &[ImagePixels],
    batch_limit: usize,
) -> Result<Vec<Embedding>> {
    if images.len() > batch_limit {
        return Err(EmbedderError::BatchTooLarge {
            len: images.len(),
            limit: batch_limit,
        });
    }
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let spec = embedder.spec();
    let vectors = embedder.embed_unchecked(images)?;
    let unavailable = |reason: String| EmbedderError::EmbedderUnavailable {
        name: spec.name.clone(),
        reason,
    };
    if vectors.len() != images.len() {
        return Err(unavailable(format!(
            "returned {} vectors for {} images",
            vectors.len(),
            images.len()
        )));
    }
    vectors
        .into_iter()
        .map(|vector| {
            if vector.len() != spec.dim {
                return Err(unavailable(format!(
                    "returned dim {}, expected {}",
                    vector.len(),
                    spec.dim
                )));
            }
            if vector.iter().any(|x| !x.is_finite()) {
                return Err(unavailable("returned a non-finite component".into()));
            }
            Ok(Embedding {
                embedder_name: spec.name.clone(),
                vector,
            })
        })
        .collect()
}

pub fn instantiate(spec: &EmbedderSpec) -> Arc<dyn Embedder> {
    match &spec.model {
        ModelRef::Builtin(kind) => Arc::new(BuiltinEmbedder {
            spec: spec.clone(),
            kind: *kind,
        }),
        ModelRef::Remote(url) => Arc::new(RemoteEmbedder::new(
            spec.clone(),
            url.clone(),
            DEFAULT_REMOTE_IN_FLIGHT,
        )),
    }
}

/// The enabled embedders of a validated registry, in declaration order.
#[derive(Clone)]
pub struct EmbedderSet {
    specs: Vec<EmbedderSpec>,
    enabled: Vec<Arc<dyn Embedder>>,
}

impl fmt::Debug for EmbedderSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EmbedderSet")
            .field("specs", &self.specs)
            .finish()
    }
}

impl EmbedderSet {
    pub fn new(specs: Vec<EmbedderSpec>) -> Result<Self> {
        let text = serde_json::to_string(&specs).expect("specs serialize");
        let specs = parse_registry(&text, "<memory>")?;
        let enabled = specs.iter().filter(|s| s.enabled).map(instantiate).collect();
        Ok(Self { specs, enabled })
    }

    /// Builds a set from prepared embedders, e.g. test doubles.
    pub fn from_embedders(embedders: Vec<Arc<dyn Embedder>>) -> Result<Self> {
        let specs: Vec<EmbedderSpec> = embedders.iter().map(|e| e.spec().clone()).collect();
        let mut seen = HashSet::new();
        for spec in &specs {
            if !seen.insert(spec.name.clone()) {
                return Err(EmbedderError::DuplicateName(spec.name.clone()));
            }
        }
        let enabled = embedders.into_iter().filter(|e| e.spec().enabled).collect();
        Ok(Self { specs, enabled })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(load_registry(path)?)
    }

    pub fn specs(&self) -> &[EmbedderSpec] {
        &self.specs
    }

    pub fn enabled(&self) -> &[Arc<dyn Embedder>] {
        &self.enabled
    }

    pub fn enabled_names(&self) -> Vec<String> {
        self.enabled.iter().map(|e| e.spec().name.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Embedder>> {
        self.enabled.iter().find(|e| e.spec().name == name)
    }

    /// Checks every spec against existing collections, then creates the
    /// missing collections of enabled specs.
    pub fn attach(&self, store: &VectorStore, params: HnswParams) -> Result<()> {
        for spec in &self.specs {
            if let Some(info) = store.collection_info(&spec.name) {
                if info.dim != spec.dim {
                    return Err(EmbedderError::DimMismatchWithExistingCollection {
                        name: spec.name.clone(),
                        existing: info.dim,
                        configured: spec.dim,
                    });
                }
            }
        }
        for e in &self.enabled {
            let spec = e.spec();
            if store.collection_info(&spec.name).is_none() {
                store.create_collection(&spec.name, spec.dim, params)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = r#"[
  {"name": "colorhist64", "model": "builtin:colorhist64", "dim": 64, "weight": 1.0, "enabled": true},
  {"name": "grid64", "model": "builtin:grid64", "dim": 64, "weight": 0.5, "enabled": true}
]"#;

    #[test]
    fn two_builtins_two_collections() {
        let specs = parse_registry(TWO, "e.json").unwrap();
        assert_eq!(specs.len(), 2);
        let set = EmbedderSet::new(specs).unwrap();
        let store = VectorStore::in_memory();
        set.attach(&store, HnswParams::default()).unwrap();
        let names: Vec<String> = store.collections().into_iter().map(|c| c.name).collect();
        assert_eq!(names, ["colorhist64", "grid64"]);
        // attaching again is a no-op
        set.attach(&store, HnswParams::default()).unwrap();
    }

    #[test]
    fn duplicate_name_rejected() {
        let text = r#"[
  {"name": "eva", "model": "remote:http://h/e", "dim": 8, "weight": 1, "enabled": true},
  {"name": "eva", "model": "remote:http://h/e", "dim": 8, "weight": 1, "enabled": false}
]"#;
        assert!(matches!(
            parse_registry(text, "x"),
            Err(EmbedderError::DuplicateName(n)) if n == "eva"
        ));
    }

    #[test]
    fn unknown_key_reports_position() {
        let text = "[\n  {\"name\": \"a\", \"model\": \"builtin:grid64\", \"dim\": 64,\n   \"weight\": 1, \"enabled\": true, \"colour\": 1}\n]";
        match parse_registry(text, "e.json") {
            Err(EmbedderError::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("colour"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        let missing = r#"[{"name": "a", "model": "builtin:grid64", "dim": 64, "enabled": true}]"#;
        match parse_registry(missing, "e.json") {
            Err(EmbedderError::Parse { msg, .. }) => assert!(msg.contains("weight"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn spec_validation() {
        let bad_dim = r#"[{"name": "a", "model": "builtin:edge36", "dim": 64, "weight": 1, "enabled": true}]"#;
        assert!(matches!(parse_registry(bad_dim, "x"), Err(EmbedderError::InvalidSpec { .. })));
        let bad_model = r#"[{"name": "a", "model": "timm:eva", "dim": 4, "weight": 1, "enabled": true}]"#;
        assert!(matches!(parse_registry(bad_model, "x"), Err(EmbedderError::Parse { .. })));
        let neg = r#"[{"name": "a", "model": "builtin:grid64", "dim": 64, "weight": -1, "enabled": true}]"#;
        assert!(matches!(parse_registry(neg, "x"), Err(EmbedderError::InvalidSpec { .. })));
    }

    #[test]
    fn changed_dim_conflicts_with_collection() {
        let store = VectorStore::in_memory();
        store.create_collection("eva", 8, HnswParams::default()).unwrap();
        let set = EmbedderSet::new(vec![EmbedderSpec {
            name: "eva".into(),
            model: ModelRef::Remote("http://127.0.0.1:1/embed".into()),
            dim: 16,
            weight: 1.0,
            enabled: true,
        }])
        .unwrap();
        assert!(matches!(
            set.attach(&store, HnswParams::default()),
            Err(EmbedderError::DimMismatchWithExistingCollection { existing: 8, configured: 16, .. })
        ));
    }

    #[test]
    fn registry_round_trips() {
        let specs = parse_registry(TWO, "x").unwrap();
        assert_eq!(parse_registry(&render_registry(&specs), "x").unwrap(), specs);
    }

    #[test]
    fn batch_limit_and_alignment() {
        let e = instantiate(&EmbedderSpec::builtin(Builtin::ColorHist64, 1.0));
        assert!(embed_batch(e.as_ref(), &[], 50).unwrap().is_empty());
        let img = ImagePixels::solid(4, 4, [10, 200, 30]);
        let many = vec![img.clone(); 51];
        assert!(matches!(
            embed_batch(e.as_ref(), &many, 50),
            Err(EmbedderError::BatchTooLarge { len: 51, limit: 50 })
        ));
        let twice = embed_batch(e.as_ref(), &many[..2], 50).unwrap();
        assert_eq!(twice[0], twice[1]);
        assert_eq!(twice[0].embedder_name, "colorhist64");
    }

    #[test]
    fn batch_matches_singletons() {
        let imgs: Vec<ImagePixels> = (0..7u8)
            .map(|i| ImagePixels::from_fn(9, 5, move |x, y| [i * 30, x as u8 * 20, y as u8 * 40]))
            .collect();
        for kind in Builtin::ALL {
            let e = instantiate(&EmbedderSpec::builtin(kind, 1.0));
            let batch = embed_batch(e.as_ref(), &imgs, 50).unwrap();
            for (i, img) in imgs.iter().enumerate() {
                let single = embed_batch(e.as_ref(), std::slice::from_ref(img), 50).unwrap();
                assert_eq!(batch[i], single[0]);
            }
        }
    }
}
