use std::collections::{BTreeMap, BTreeSet};

use needle_core::embedders::{Builtin, EmbedderSet, EmbedderSpec};
use needle_core::fusion::{run_query, QueryDeps, QueryPlan};
use needle_core::genhub::{mock_render, parse_prompt, Color, EngineSpec, GenHub, SceneSpec, Shape};
use needle_core::synthbench::{
    build_corpus, evaluate, marginals, query_suite, Bench, Hardness, RandomRetriever, CORPUS_SIDE,
};
use needle_core::vecstore::{HnswParams, VectorStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn corpus_marginals_are_near_uniform() {
    let corpus = build_corpus(2000, 42);
    let counts = marginals(&corpus);
    // expected share of each attribute value over the space of valid scenes
    let space = SceneSpec::all();
    let mut expected: BTreeMap<String, f64> = BTreeMap::new();
    for s in &space {
        for key in [
            format!("shape={}", s.shape),
            format!("color={}", s.shape_color),
            format!("background={}", s.background),
            format!("position={}", s.position),
        ] {
            *expected.entry(key).or_default() += 1.0 / space.len() as f64;
        }
    }
    assert_eq!(counts.keys().collect::<Vec<_>>(), expected.keys().collect::<Vec<_>>());
    for (key, share) in &expected {
        let got = counts[key] as f64 / corpus.len() as f64;
        assert!((got - share).abs() <= 0.05, "{key}: {got} vs {share}");
    }
}

#[test]
fn random_baseline_tracks_prevalence() {
    let corpus = build_corpus(2000, 42);
    let queries: Vec<_> = query_suite(&corpus, 42 ^ 0x5eed).into_iter().take(20).collect();
    let prevalence = queries
        .iter()
        .map(|q| q.relevant.len() as f64 / corpus.len() as f64)
        .sum::<f64>()
        / queries.len() as f64;
    let report = evaluate(
        &queries,
        &RandomRetriever {
            corpus_ids: corpus.iter().map(|i| i.id).collect(),
            seed: 99,
        },
    )
    .unwrap();
    assert!((report.map - prevalence).abs() <= 0.05, "{} vs {prevalence}", report.map);
}

#[test]
fn suite_hardness_counts_constrained_attributes() {
    let corpus = build_corpus(500, 3);
    for q in query_suite(&corpus, 3) {
        let want: BTreeSet<u64> = corpus.iter().filter(|i| q.pattern.matches(&i.scene)).map(|i| i.id).collect();
        assert_eq!(q.relevant, want);
        assert!(!q.relevant.is_empty());
        match q.hardness {
            Hardness::Simple => assert_eq!(q.pattern.constrained(), 1),
            Hardness::Hard => assert!(q.pattern.constrained() >= 3),
        }
    }
}

const RED_CIRCLE: &str = "a red circle on a white background";

/// 200 images: ten renders of the scene the prompt describes, the rest drawn
/// from every scene that is not a red circle.
fn red_circle_store() -> (VectorStore, BTreeSet<u64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let space = SceneSpec::all();
    let is_target = |s: &SceneSpec| s.shape == Shape::Circle && s.shape_color == Color::Red;
    let described = parse_prompt(RED_CIRCLE);
    assert!(is_target(&described) && described.background == Color::White);
    let mut scenes = vec![described; 10];
    while scenes.len() < 200 {
        let s = space[rng.gen_range(0..space.len())];
        if !is_target(&s) {
            scenes.push(s);
        }
    }
    let store = VectorStore::in_memory();
    for b in [Builtin::ColorHist64, Builtin::Grid64] {
        store.create_collection(b.tag(), b.dim(), HnswParams::default()).unwrap();
    }
    let mut targets = BTreeSet::new();
    for (i, s) in scenes.iter().enumerate() {
        let px = mock_render(s, rng.gen(), CORPUS_SIDE);
        for b in [Builtin::ColorHist64, Builtin::Grid64] {
            store.insert(b.tag(), i as u64, &b.embed(&px)).unwrap();
        }
        if is_target(s) {
            targets.insert(i as u64);
        }
    }
    (store, targets)
}

#[test]
fn red_circle_prompt_finds_red_circles() {
    let (store, targets) = red_circle_store();
    assert_eq!(targets.len(), 10);
    let hub = GenHub::new(vec![EngineSpec::mock("mock", 0)]).unwrap();
    let embedders = EmbedderSet::new(vec![
        EmbedderSpec::builtin(Builtin::ColorHist64, 1.0),
        EmbedderSpec::builtin(Builtin::Grid64, 1.0),
    ])
    .unwrap();
    let mut plan = QueryPlan::new(2, 10);
    plan.k = 50;
    plan.seed = Some(5);
    let deps = QueryDeps {
        genhub: &hub,
        embedders: &embedders,
        store: &store,
    };
    let result = run_query(RED_CIRCLE, &plan, &deps).unwrap();
    assert_eq!(result.results.len(), 10);
    let hits = result.results.iter().filter(|r| targets.contains(&r.id)).count();
    assert!(hits >= 7, "only {hits} of the top 10 are red circles");

    // the same guides searched exhaustively and fused by hand
    let mut fused: BTreeMap<u64, f64> = BTreeMap::new();
    for g in &result.guides {
        for b in [Builtin::ColorHist64, Builtin::Grid64] {
            let exact = store.exact_search(b.tag(), &b.embed(&g.guide.pixels), plan.k).unwrap();
            for (rank, h) in exact.iter().enumerate() {
                *fused.entry(h.id).or_default() += 1.0 / (plan.kappa + rank as f64 + 1.0);
            }
        }
    }
    let mut exact_top: Vec<(u64, f64)> = fused.into_iter().collect();
    exact_top.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let exact_hits = exact_top[..10].iter().filter(|(id, _)| targets.contains(id)).count();
    assert!(exact_hits >= 7, "exact oracle finds only {exact_hits}");

    let again = run_query(RED_CIRCLE, &plan, &deps).unwrap();
    assert_eq!(result.results, again.results);
    let t = result.timings;
    assert!((t.generate_ms + t.search_ms + t.fuse_ms - t.total_ms).abs() <= 0.05 * t.total_ms + 1e-6);

    plan.n = 1;
    let top = run_query(RED_CIRCLE, &plan, &deps).unwrap();
    assert_eq!(top.results, result.results[..1]);
}

#[test]
fn empty_index_returns_guides_without_results() {
    let store = VectorStore::in_memory();
    let embedders = EmbedderSet::new(vec![EmbedderSpec::builtin(Builtin::Edge36, 1.0)]).unwrap();
    embedders.attach(&store, HnswParams::default()).unwrap();
    let hub = GenHub::new(vec![EngineSpec::mock("mock", 0)]).unwrap();
    let plan = QueryPlan::new(3, 5);
    let deps = QueryDeps {
        genhub: &hub,
        embedders: &embedders,
        store: &store,
    };
    let r = run_query("a green square", &plan, &deps).unwrap();
    assert!(r.results.is_empty());
    assert_eq!(r.guides.len(), 3);
}

#[test]
fn bench_reports_are_deterministic() {
    let bench = Bench::build(300, 9).unwrap();
    let system = bench.pipeline(&[Builtin::ColorHist64, Builtin::Grid64], 2, needle_core::genhub::Resolution::Small);
    let a = evaluate(&bench.queries, &system).unwrap();
    let b = evaluate(&bench.queries, &system).unwrap();
    let aps = |r: &needle_core::synthbench::BenchReport| r.per_query.iter().map(|q| q.ap).collect::<Vec<_>>();
    assert_eq!(aps(&a), aps(&b));
    assert!(a.per_query.iter().all(|q| (0.0..=1.0).contains(&q.ap) && (0.0..=1.0).contains(&q.rr)));
}
