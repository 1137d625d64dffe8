//! Synthetic retrieval benchmark: a labeled corpus of rendered scenes, a
//! query suite with exact ground truth, and AP/MAP/MRR evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::embedders::{Builtin, EmbedderSet, EmbedderSpec};
use crate::fusion::{run_query, FusionError, QueryDeps, QueryPlan, Timings};
use crate::genhub::{
    mock_render, Color, EngineSpec, GenHub, Position, Resolution, ScenePattern, SceneSpec, Shape,
};
use crate::pixels::ImagePixels;
use crate::vecstore::{HnswParams, VecStoreError, VectorStore};

/// Side of corpus images in pixels.
pub const CORPUS_SIDE: u32 = 128;
pub const SIMPLE_QUERIES: usize = 20;
pub const HARD_QUERIES: usize = 20;
/// Ranking depth the pipeline is evaluated at.
pub const EVAL_DEPTH: usize = 100;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("query has no relevant image")]
    EmptyRelevantSet,
    #[error(transparent)]
    Query(#[from] FusionError),
    #[error(transparent)]
    Store(#[from] VecStoreError),
    #[error("setup: {0}")]
    Setup(String),
}

#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub id: u64,
    pub scene: SceneSpec,
    pub jitter_seed: u64,
    pub pixels: ImagePixels,
}

/// `count` scenes drawn uniformly over all valid scenes, rendered at
/// [`CORPUS_SIDE`]. Image ids are `0..count`.
pub fn build_corpus(count: usize, seed: u64) -> Vec<LabeledImage> {
    let scenes = SceneSpec::all();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drawn: Vec<(SceneSpec, u64)> = (0..count)
        .map(|_| (scenes[rng.gen_range(0..scenes.len())], rng.gen::<u64>()))
        .collect();
    drawn
        .into_par_iter()
        .enumerate()
        .map(|(i, (scene, jitter_seed))| LabeledImage {
            id: i as u64,
            scene,
            jitter_seed,
            pixels: mock_render(&scene, jitter_seed, CORPUS_SIDE),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Hardness {
    Simple,
    Hard,
}

#[derive(Debug, Clone)]
pub struct BenchQuery {
    pub text: String,
    pub pattern: ScenePattern,
    pub relevant: BTreeSet<u64>,
    pub hardness: Hardness,
}

/// Prompt text for a pattern in the mock-engine grammar.
pub fn pattern_prompt(p: &ScenePattern) -> String {
    let mut text = String::from("a ");
    if let Some(c) = p.shape_color {
        write!(text, "{c} ").unwrap();
    }
    match p.shape {
        Some(s) => text.push_str(s.as_str()),
        None if p.shape_color.is_some() => text.push_str("shape"),
        None => text = "something".into(),
    }
    if let Some(b) = p.background {
        write!(text, " on a {b} background").unwrap();
    }
    if let Some(pos) = p.position {
        write!(text, " on the {pos}").unwrap();
    }
    text
}

fn single_attribute_patterns() -> Vec<ScenePattern> {
    let mut out = Vec::new();
    for &s in Shape::ALL {
        out.push(ScenePattern { shape: Some(s), ..Default::default() });
    }
    for &c in Color::ALL {
        out.push(ScenePattern { shape_color: Some(c), ..Default::default() });
    }
    for &c in Color::ALL {
        out.push(ScenePattern { background: Some(c), ..Default::default() });
    }
    for &p in Position::ALL {
        out.push(ScenePattern { position: Some(p), ..Default::default() });
    }
    out
}

fn make_query(corpus: &[LabeledImage], pattern: ScenePattern, hardness: Hardness) -> BenchQuery {
    BenchQuery {
        text: pattern_prompt(&pattern),
        relevant: corpus
            .iter()
            .filter(|img| pattern.matches(&img.scene))
            .map(|img| img.id)
            .collect(),
        pattern,
        hardness,
    }
}

/// Simple queries constrain one scene attribute; hard queries constrain all
/// four and name a scene present in the corpus.
pub fn query_suite(corpus: &[LabeledImage], seed: u64) -> Vec<BenchQuery> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut simple = single_attribute_patterns();
    simple.shuffle(&mut rng);
    let mut queries: Vec<BenchQuery> = simple
        .into_iter()
        .map(|p| make_query(corpus, p, Hardness::Simple))
        .filter(|q| !q.relevant.is_empty())
        .take(SIMPLE_QUERIES)
        .collect();

    let mut present: Vec<SceneSpec> = corpus.iter().map(|i| i.scene).collect::<BTreeSet<_>>().into_iter().collect();
    present.shuffle(&mut rng);
    queries.extend(present.into_iter().take(HARD_QUERIES).map(|s| {
        let pattern = ScenePattern {
            shape: Some(s.shape),
            shape_color: Some(s.shape_color),
            background: Some(s.background),
            position: Some(s.position),
        };
        make_query(corpus, pattern, Hardness::Hard)
    }));
    queries
}

/// Mean over relevant documents of precision at their rank; relevant
/// documents missing from the ranking contribute 0.
pub fn average_precision(ranked: &[u64], relevant: &BTreeSet<u64>) -> Result<f64, BenchError> {
    if relevant.is_empty() {
        return Err(BenchError::EmptyRelevantSet);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranked.iter().enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

/// 1 / rank of the first relevant document, 0 if none is ranked.
pub fn reciprocal_rank(ranked: &[u64], relevant: &BTreeSet<u64>) -> f64 {
    ranked
        .iter()
        .position(|id| relevant.contains(id))
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

/// Something that ranks corpus images for a benchmark query.
pub trait Retriever: Sync {
    fn name(&self) -> String;
    fn rank(&self, query: &BenchQuery, index: usize) -> Result<(Vec<u64>, Option<Timings>), BenchError>;
}

/// Returns exactly the relevant set.
pub struct OracleRetriever;

impl Retriever for OracleRetriever {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn rank(&self, q: &BenchQuery, _: usize) -> Result<(Vec<u64>, Option<Timings>), BenchError> {
        Ok((q.relevant.iter().copied().collect(), None))
    }
}

/// A seeded random permutation of the whole corpus.
pub struct RandomRetriever {
    pub corpus_ids: Vec<u64>,
    pub seed: u64,
}

impl Retriever for RandomRetriever {
    fn name(&self) -> String {
        "random".into()
    }

    fn rank(&self, _: &BenchQuery, index: usize) -> Result<(Vec<u64>, Option<Timings>), BenchError> {
        let mut ids = self.corpus_ids.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(index as u64));
        ids.shuffle(&mut rng);
        Ok((ids, None))
    }
}

/// The full query pipeline with a fixed embedder subset and guide count.
pub struct PipelineRetriever {
    pub label: String,
    pub plan: QueryPlan,
    pub genhub: Arc<GenHub>,
    pub embedders: EmbedderSet,
    pub store: VectorStore,
    /// Guide seeds are `seed_base + query index`.
    pub seed_base: u64,
}

impl Retriever for PipelineRetriever {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn rank(&self, q: &BenchQuery, index: usize) -> Result<(Vec<u64>, Option<Timings>), BenchError> {
        let mut plan = self.plan.clone();
        plan.seed = Some(self.seed_base.wrapping_add(index as u64 * 1000));
        let deps = QueryDeps {
            genhub: &self.genhub,
            embedders: &self.embedders,
            store: &self.store,
        };
        let result = run_query(&q.text, &plan, &deps)?;
        Ok((result.results.iter().map(|r| r.id).collect(), Some(result.timings)))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryScore {
    pub text: String,
    pub hardness: Hardness,
    pub relevant: usize,
    pub ap: f64,
    pub rr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub system: String,
    pub per_query: Vec<QueryScore>,
    pub map: f64,
    pub map_simple: f64,
    pub map_hard: f64,
    pub mrr: f64,
    /// Mean stage timings; absent for systems that do not run the pipeline.
    pub latency: Option<Timings>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Runs every query sequentially and aggregates the scores.
pub fn evaluate(queries: &[BenchQuery], system: &dyn Retriever) -> Result<BenchReport, BenchError> {
    let mut per_query = Vec::with_capacity(queries.len());
    let mut timings = Vec::new();
    for (i, q) in queries.iter().enumerate() {
        let (ranked, t) = system.rank(q, i)?;
        timings.extend(t);
        per_query.push(QueryScore {
            text: q.text.clone(),
            hardness: q.hardness,
            relevant: q.relevant.len(),
            ap: average_precision(&ranked, &q.relevant)?,
            rr: reciprocal_rank(&ranked, &q.relevant),
        });
    }
    let of = |h: Hardness| mean(per_query.iter().filter(|s| s.hardness == h).map(|s| s.ap));
    let latency = (!timings.is_empty()).then(|| Timings {
        generate_ms: mean(timings.iter().map(|t| t.generate_ms)),
        search_ms: mean(timings.iter().map(|t| t.search_ms)),
        fuse_ms: mean(timings.iter().map(|t| t.fuse_ms)),
        total_ms: mean(timings.iter().map(|t| t.total_ms)),
    });
    Ok(BenchReport {
        system: system.name(),
        map: mean(per_query.iter().map(|s| s.ap)),
        map_simple: of(Hardness::Simple),
        map_hard: of(Hardness::Hard),
        mrr: mean(per_query.iter().map(|s| s.rr)),
        per_query,
        latency,
    })
}

/// A corpus indexed under every builtin embedder, ready for pipeline runs.
pub struct Bench {
    pub corpus: Vec<LabeledImage>,
    pub queries: Vec<BenchQuery>,
    pub store: VectorStore,
    pub genhub: Arc<GenHub>,
}

impl Bench {
    pub fn build(count: usize, corpus_seed: u64) -> Result<Self, BenchError> {
        let corpus = build_corpus(count, corpus_seed);
        let queries = query_suite(&corpus, corpus_seed ^ 0x5eed);
        let store = VectorStore::in_memory();
        for kind in Builtin::ALL {
            store.create_collection(kind.tag(), kind.dim(), HnswParams::default())?;
            let vectors: Vec<Vec<f32>> = corpus.par_iter().map(|img| kind.embed(&img.pixels)).collect();
            for (img, v) in corpus.iter().zip(&vectors) {
                store.insert(kind.tag(), img.id, v)?;
            }
        }
        let genhub = GenHub::new(vec![EngineSpec::mock("mock", 0)])
            .map_err(|e| BenchError::Setup(e.to_string()))?;
        Ok(Self {
            corpus,
            queries,
            store,
            genhub: Arc::new(genhub),
        })
    }

    /// The pipeline over `embedders` with `m` guides, ranking to [`EVAL_DEPTH`].
    pub fn pipeline(&self, embedders: &[Builtin], m: usize, resolution: Resolution) -> PipelineRetriever {
        self.pipeline_at_depth(embedders, m, resolution, EVAL_DEPTH)
    }

    /// As [`Bench::pipeline`], with per-source depth and result count `depth`.
    pub fn pipeline_at_depth(
        &self,
        embedders: &[Builtin],
        m: usize,
        resolution: Resolution,
        depth: usize,
    ) -> PipelineRetriever {
        let specs: Vec<EmbedderSpec> = embedders.iter().map(|&b| EmbedderSpec::builtin(b, 1.0)).collect();
        let mut plan = QueryPlan::new(m, depth);
        plan.k = depth;
        plan.resolution = resolution;
        let names: Vec<&str> = embedders.iter().map(|b| b.tag()).collect();
        PipelineRetriever {
            label: format!("m={m} {}", names.join("+")),
            plan,
            genhub: self.genhub.clone(),
            embedders: EmbedderSet::new(specs).expect("builtin specs are valid"),
            store: self.store.clone(),
            seed_base: 7,
        }
    }

    /// The two-guide ensemble and every single-guide, single-embedder
    /// ablation over `embedders`, followed by the oracle and random baselines.
    pub fn ablations(&self, embedders: &[Builtin], resolution: Resolution) -> Result<Vec<BenchReport>, BenchError> {
        let mut reports = vec![evaluate(&self.queries, &self.pipeline(embedders, 2, resolution))?];
        for &e in embedders {
            reports.push(evaluate(&self.queries, &self.pipeline(&[e], 1, resolution))?);
        }
        reports.push(evaluate(&self.queries, &OracleRetriever)?);
        reports.push(evaluate(
            &self.queries,
            &RandomRetriever {
                corpus_ids: self.corpus.iter().map(|i| i.id).collect(),
                seed: 99,
            },
        )?);
        Ok(reports)
    }
}

/// Fixed-width table, one row per system.
pub fn render_table(reports: &[BenchReport]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<28} {:>8} {:>8} {:>8} {:>8} {:>10}",
        "system", "MAP", "simple", "hard", "MRR", "total_ms"
    )
    .unwrap();
    for r in reports {
        let latency = r
            .latency
            .map_or("-".to_string(), |t| format!("{:.1}", t.total_ms));
        writeln!(
            out,
            "{:<28} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>10}",
            r.system, r.map, r.map_simple, r.map_hard, r.mrr, latency
        )
        .unwrap();
    }
    out
}

/// Per-query AP columns, one row per query, for plotting.
pub fn render_per_query(reports: &[BenchReport]) -> String {
    let mut out = String::from("query\thardness\trelevant");
    for r in reports {
        write!(out, "\t{}", r.system).unwrap();
    }
    out.push('\n');
    let Some(first) = reports.first() else {
        return out;
    };
    for (i, q) in first.per_query.iter().enumerate() {
        write!(out, "{}\t{:?}\t{}", q.text, q.hardness, q.relevant).unwrap();
        for r in reports {
            write!(out, "\t{:.4}", r.per_query[i].ap).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Attribute counts over a corpus, keyed `attribute=value`.
pub fn marginals(corpus: &[LabeledImage]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for img in corpus {
        let s = img.scene;
        for key in [
            format!("shape={}", s.shape),
            format!("color={}", s.shape_color),
            format!("background={}", s.background),
            format!("position={}", s.position),
        ] {
            *out.entry(key).or_default() += 1;
        }
    }
    out
}
