//! Query pipeline: generate guides, embed them, drop outlier guides, search
//! every (guide, embedder) pair and fuse the ranked lists.

mod lof;
mod rrf;

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use lof::lof_scores;
pub use rrf::rrf_fuse;

use crate::embedders::{embed_batch, EmbedderError, EmbedderSet};
use crate::genhub::{GenError, GenHub, GenRequest, GuideImage, Resolution};
use crate::pixels::ImagePixels;
use crate::vecstore::{SearchHit, VecStoreError, VectorStore};

pub const DEFAULT_KAPPA: f64 = 60.0;
pub const DEFAULT_LOF_THRESHOLD: f64 = 1.5;
pub const DEFAULT_DEPTH: usize = 100;
/// Below this many guides no outlier filtering happens.
pub const MIN_GUIDES_FOR_FILTER: usize = 3;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("no weight for embedder `{0}`")]
    MissingWeight(String),
    #[error("{points} points cannot support a {k}-neighborhood")]
    TooFewPoints { points: usize, k: usize },
    #[error("misaligned embeddings: {0}")]
    MisalignedEmbeddings(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("no enabled embedder")]
    NoEmbedders,
    #[error(transparent)]
    Generation(#[from] GenError),
    #[error(transparent)]
    Embedding(#[from] EmbedderError),
    #[error(transparent)]
    Store(#[from] VecStoreError),
}

/// Parameters of one query. The embedder count is not stored: every enabled
/// embedder takes part.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPlan {
    /// Guides to generate.
    pub m: usize,
    /// Per-source search depth.
    pub k: usize,
    pub kappa: f64,
    pub lof_k: usize,
    pub lof_threshold: f64,
    pub resolution: Resolution,
    /// Results returned.
    pub n: usize,
    /// Base seed of the guides; fresh when unset.
    pub seed: Option<u64>,
    /// Restricts generation to these engines.
    pub engines: Option<Vec<String>>,
}

impl QueryPlan {
    pub fn new(m: usize, n: usize) -> Self {
        Self {
            m,
            k: DEFAULT_DEPTH.max(n),
            kappa: DEFAULT_KAPPA,
            lof_k: default_lof_k(m),
            lof_threshold: DEFAULT_LOF_THRESHOLD,
            resolution: Resolution::default(),
            n,
            seed: None,
            engines: None,
        }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |msg: String| Err(FusionError::InvalidPlan(msg));
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if self.n == 0 || self.n > self.k {
            return bad(format!("n = {} must be in 1..=k (k = {})", self.n, self.k));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa {} must be positive", self.kappa));
        }
        if !(self.lof_threshold > 0.0) {
            return bad(format!("lof threshold {} must be positive", self.lof_threshold));
        }
        if self.m >= MIN_GUIDES_FOR_FILTER && (self.lof_k == 0 || self.lof_k >= self.m) {
            return bad(format!("lof k {} must be in 1..m (m = {})", self.lof_k, self.m));
        }
        Ok(())
    }
}

pub fn default_lof_k(m: usize) -> usize {
    3.min(m.saturating_sub(1)).max(1)
}

/// Hits of one (guide, embedder) search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedList {
    pub guide_index: usize,
    pub embedder: String,
    pub hits: Vec<SearchHit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<bool>,
    /// Mean LOF per guide; `None` when filtering was skipped.
    pub mean_lof: Vec<Option<f64>>,
}

impl FilterOutcome {
    pub fn kept_indices(&self) -> Vec<usize> {
        (0..self.kept.len()).filter(|&i| self.kept[i]).collect()
    }
}

/// Drops guides whose LOF, averaged over embedder spaces, exceeds the
/// threshold. With fewer than three guides all are kept, and the guide with
/// the lowest mean LOF always survives.
pub fn filter_guides(
    embeddings: &BTreeMap<String, Vec<Vec<f32>>>,
    m: usize,
    lof_k: usize,
    threshold: f64,
) -> Result<FilterOutcome, FusionError> {
    for (name, vectors) in embeddings {
        if vectors.len() != m {
            return Err(FusionError::MisalignedEmbeddings(format!(
                "`{name}` has {} vectors for {m} guides",
                vectors.len()
            )));
        }
    }
    if m < MIN_GUIDES_FOR_FILTER || embeddings.is_empty() {
        return Ok(FilterOutcome {
            kept: vec![true; m],
            mean_lof: vec![None; m],
        });
    }
    let mut sums = vec![0.0f64; m];
    for vectors in embeddings.values() {
        for (s, v) in sums.iter_mut().zip(lof_scores(vectors, lof_k)?) {
            *s += v;
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / embeddings.len() as f64).collect();
    let mut kept: Vec<bool> = means.iter().map(|&x| x <= threshold).collect();
    if !kept.contains(&true) {
        let best = (0..m)
            .min_by(|&a, &b| means[a].total_cmp(&means[b]).then(a.cmp(&b)))
            .expect("m > 0");
        kept[best] = true;
    }
    Ok(FilterOutcome {
        kept,
        mean_lof: means.into_iter().map(Some).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredImage {
    pub id: u64,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct GuideOutcome {
    pub guide: GuideImage,
    pub kept: bool,
    pub mean_lof: Option<f64>,
}

/// Wall-clock stage durations in milliseconds. `search_ms` covers embedding
/// the guides, outlier filtering and the nearest-neighbor searches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timings {
    pub generate_ms: f64,
    pub search_ms: f64,
    pub fuse_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone)]
pub struct QueryResult {
    pub results: Vec<ScoredImage>,
    pub guides: Vec<GuideOutcome>,
    /// Every (guide, embedder) list, including those of dropped guides.
    pub sources: Vec<RankedList>,
    pub timings: Timings,
}

pub struct QueryDeps<'a> {
    pub genhub: &'a GenHub,
    pub embedders: &'a EmbedderSet,
    pub store: &'a VectorStore,
}

pub fn run_query(prompt: &str, plan: &QueryPlan, deps: &QueryDeps) -> Result<QueryResult, FusionError> {
    plan.validate()?;
    let embedders = deps.embedders.enabled();
    if embedders.is_empty() {
        return Err(FusionError::NoEmbedders);
    }
    let start = Instant::now();

    let guides = deps.genhub.generate(
        &GenRequest {
            prompt: prompt.to_string(),
            m: plan.m,
            resolution: plan.resolution,
            seed: plan.seed,
        },
        plan.engines.as_deref(),
    )?;
    let generated = Instant::now();

    let pixels: Vec<ImagePixels> = guides.iter().map(|g| g.pixels.clone()).collect();
    let embeddings = embedders
        .par_iter()
        .map(|e| {
            let vectors = embed_batch(e.as_ref(), &pixels, pixels.len())?
                .into_iter()
                .map(|emb| emb.vector)
                .collect::<Vec<_>>();
            Ok((e.spec().name.clone(), vectors))
        })
        .collect::<Result<BTreeMap<String, Vec<Vec<f32>>>, EmbedderError>>()?;
    let filter = filter_guides(&embeddings, plan.m, plan.lof_k, plan.lof_threshold)?;

    let pairs: Vec<(usize, &String)> = (0..plan.m)
        .flat_map(|g| embedders.iter().map(move |e| (g, &e.spec().name)))
        .collect();
    let sources = pairs
        .par_iter()
        .map(|&(g, name)| {
            // a featureless guide has no direction to rank by
            let hits = match deps.store.search_default(name, &embeddings[name][g], plan.k) {
                Err(VecStoreError::ZeroVector) => Vec::new(),
                other => other?,
            };
            Ok(RankedList {
                guide_index: g,
                embedder: name.clone(),
                hits,
            })
        })
        .collect::<Result<Vec<RankedList>, VecStoreError>>()?;
    let searched = Instant::now();

    let weights: BTreeMap<String, f64> = embedders
        .iter()
        .map(|e| (e.spec().name.clone(), e.spec().weight))
        .collect();
    let kept_lists: Vec<&RankedList> = sources.iter().filter(|l| filter.kept[l.guide_index]).collect();
    let mut fused = rrf_fuse(&kept_lists, &weights, plan.kappa)?;
    fused.truncate(plan.n);
    let results = fused
        .into_iter()
        .map(|(id, score)| ScoredImage { id, score })
        .collect();
    let done = Instant::now();

    let timings = Timings {
        generate_ms: (generated - start).as_secs_f64() * 1e3,
        search_ms: (searched - generated).as_secs_f64() * 1e3,
        fuse_ms: (done - searched).as_secs_f64() * 1e3,
        total_ms: (done - start).as_secs_f64() * 1e3,
    };
    let guides = guides
        .into_iter()
        .enumerate()
        .map(|(i, guide)| GuideOutcome {
            guide,
            kept: filter.kept[i],
            mean_lof: filter.mean_lof[i],
        })
        .collect();
    Ok(QueryResult {
        results,
        guides,
        sources,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_guides_skip_filtering() {
        let mut e = BTreeMap::new();
        e.insert("a".to_string(), vec![vec![0.0, 0.0], vec![100.0, 100.0]]);
        let out = filter_guides(&e, 2, 1, 1.5).unwrap();
        assert_eq!(out.kept, vec![true, true]);
    }

    #[test]
    fn outlier_guide_dropped_and_never_all() {
        let mut e = BTreeMap::new();
        e.insert(
            "a".to_string(),
            vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![0.0, 0.1], vec![0.1, 0.1], vec![9.0, 9.0]],
        );
        let out = filter_guides(&e, 5, 3, 1.5).unwrap();
        assert_eq!(out.kept_indices(), vec![0, 1, 2, 3]);

        let out = filter_guides(&e, 5, 3, 1e-6).unwrap();
        assert_eq!(out.kept.iter().filter(|&&k| k).count(), 1);
    }

    #[test]
    fn identical_guides_all_kept() {
        let mut e = BTreeMap::new();
        e.insert("a".to_string(), vec![vec![0.5; 4]; 4]);
        e.insert("b".to_string(), vec![vec![1.0; 3]; 4]);
        let out = filter_guides(&e, 4, 3, 1.5).unwrap();
        assert_eq!(out.kept, vec![true; 4]);
        assert_eq!(out.mean_lof, vec![Some(1.0); 4]);
    }

    #[test]
    fn misaligned_rejected() {
        let mut e = BTreeMap::new();
        e.insert("a".to_string(), vec![vec![0.0]; 3]);
        e.insert("b".to_string(), vec![vec![0.0]; 2]);
        assert!(matches!(
            filter_guides(&e, 3, 2, 1.5),
            Err(FusionError::MisalignedEmbeddings(_))
        ));
    }

    #[test]
    fn plan_validation() {
        assert!(QueryPlan::new(2, 10).validate().is_ok());
        assert_eq!(QueryPlan::new(1, 1).lof_k, 1);
        assert_eq!(QueryPlan::new(8, 1).lof_k, 3);
        let mut p = QueryPlan::new(4, 10);
        p.lof_k = 4;
        assert!(p.validate().is_err());
        let mut p = QueryPlan::new(2, 10);
        p.k = 5;
        assert!(p.validate().is_err());
    }
}
