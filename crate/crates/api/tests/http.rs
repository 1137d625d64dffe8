use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use needle_api::wire::{DirectoryView, ErrorBody, Generators, QueryResponse, ServiceState, StatusReport, Versions};
use needle_api::{Backend, BackendOptions, RunningServer};
use needle_core::config::{Mode, Paths};
use needle_core::genhub::{mock_render, SceneSpec};
use needle_core::ingest::IngestConfig;
use serde_json::{json, Value};

struct Fixture {
    _home: tempfile::TempDir,
    server: RunningServer,
}

impl Fixture {
    fn new() -> Self {
        let home = tempfile::tempdir().unwrap();
        let options = BackendOptions {
            mode: Mode::Fast,
            ingest: IngestConfig {
                reconcile_every: None,
                ..IngestConfig::default()
            },
            flush_every: Duration::from_millis(200),
            fault_injection: true,
            ..BackendOptions::default()
        };
        let backend = Arc::new(Backend::open(Paths::new(home.path(), None), options).unwrap());
        backend.start_indexing().unwrap();
        let server = RunningServer::start(backend, "127.0.0.1:0").unwrap();
        Self { _home: home, server }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.server.url())
    }

    fn get(&self, path: &str) -> (u16, String) {
        response(ureq::get(&self.url(path)).call())
    }

    fn send(&self, method: &str, path: &str, body: Value) -> (u16, String) {
        response(ureq::request(method, &self.url(path)).send_json(body))
    }
}

fn response(r: Result<ureq::Response, ureq::Error>) -> (u16, String) {
    match r {
        Ok(resp) => (resp.status(), resp.into_string().unwrap()),
        Err(ureq::Error::Status(code, resp)) => (code, resp.into_string().unwrap()),
        Err(e) => panic!("transport: {e}"),
    }
}

fn write_images(dir: &Path, count: usize) {
    let space = SceneSpec::all();
    for i in 0..count {
        mock_render(&space[i * 7 % space.len()], i as u64, 64)
            .save_png(&dir.join(format!("img{i:03}.png")))
            .unwrap();
    }
}

fn wait_for_progress(fx: &Fixture, id: i64) -> DirectoryView {
    let deadline = Instant::now() + Duration::from_secs(30);
    loop {
        let (code, body) = fx.get(&format!("/v1/directories/{id}"));
        assert_eq!(code, 200, "{body}");
        let view: DirectoryView = serde_json::from_str(&body).unwrap();
        if view.progress >= 1.0 || Instant::now() > deadline {
            return view;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
}

#[test]
fn health_version_and_fresh_status() {
    let fx = Fixture::new();
    assert_eq!(fx.get("/v1/health"), (200, "ok".to_string()));
    let (code, body) = fx.get("/v1/version");
    assert_eq!(code, 200);
    let versions: Versions = serde_json::from_str(&body).unwrap();
    assert_eq!(versions.components.len(), 2);

    let (code, body) = fx.get("/v1/status");
    assert_eq!(code, 200);
    let status: StatusReport = serde_json::from_str(&body).unwrap();
    assert!(status.api_healthy);
    assert!(status.directories.is_empty());
    assert!(status.services.values().all(|s| *s == ServiceState::Up), "{body}");
    assert_eq!(status.mode, "fast");
}

#[test]
fn stopped_flush_thread_shows_vecstore_down() {
    let fx = Fixture::new();
    let (code, _) = fx.send("POST", "/v1/faults", json!({"stop": "vecstore"}));
    assert_eq!(code, 204);
    let status: StatusReport = serde_json::from_str(&fx.get("/v1/status").1).unwrap();
    assert_eq!(status.services["vecstore"], ServiceState::Down);
    assert_eq!(status.services["api"], ServiceState::Up);
}

#[test]
fn query_contract() {
    let fx = Fixture::new();
    let dir = tempfile::tempdir().unwrap();
    write_images(dir.path(), 40);
    let (code, body) = fx.send("POST", "/v1/directories", json!({"path": dir.path()}));
    assert_eq!(code, 202, "{body}");
    let id = serde_json::from_str::<DirectoryView>(&body).unwrap().id;
    assert_eq!(wait_for_progress(&fx, id).progress, 1.0);

    let req = json!({"prompt": "a red circle on a white background", "n": 10, "seed": 3});
    let (code, body) = fx.send("POST", "/v1/query", req.clone());
    assert_eq!(code, 200, "{body}");
    let r: QueryResponse = serde_json::from_str(&body).unwrap();
    assert_eq!(r.results.len(), 10);
    assert!(r.results.windows(2).all(|w| w[0].score >= w[1].score));
    assert!(r.results.iter().all(|x| x.path.starts_with(dir.path().to_str().unwrap())));
    assert_eq!((r.plan.m, r.plan.l), (1, 2));
    assert_eq!(r.sources.len(), 2);

    // parsing the wire text and rendering it again is lossless
    let again: QueryResponse = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
    assert_eq!(again, r);
    let (_, body2) = fx.send("POST", "/v1/query", req);
    let r2: QueryResponse = serde_json::from_str(&body2).unwrap();
    assert_eq!(r2.results, r.results);

    let guide = ureq::get(&fx.url(&r.guides[0].url)).call().unwrap();
    assert_eq!(guide.header("content-type"), Some("image/png"));
    let image = ureq::get(&fx.url(&r.results[0].url)).call().unwrap();
    assert_eq!(image.header("content-type"), Some("image/png"));

    let (code, _) = fx.send("POST", "/v1/query", json!({"prompt": "", "n": 5}));
    assert_eq!(code, 400);
    let (code, _) = fx.send("POST", "/v1/query", json!({"prompt": "x", "n": 0}));
    assert_eq!(code, 400);
    let (code, _) = fx.send("POST", "/v1/query", json!({"prompt": "x"}));
    assert_eq!(code, 400);
    assert_eq!(fx.get("/v1/images/nope").0, 404);
}

#[test]
fn empty_index_returns_no_results() {
    let fx = Fixture::new();
    let (code, body) = fx.send("POST", "/v1/query", json!({"prompt": "a blue square", "n": 5}));
    assert_eq!(code, 200, "{body}");
    let r: QueryResponse = serde_json::from_str(&body).unwrap();
    assert!(r.results.is_empty());
    assert_eq!(r.guides.len(), 1);
}

#[test]
fn disabled_generators_give_503_with_causes() {
    let fx = Fixture::new();
    let gens: Generators = serde_json::from_str(&fx.get("/v1/generators").1).unwrap();
    let per_engine: serde_json::Map<String, Value> = gens
        .engines
        .iter()
        .map(|e| (e.name.clone(), json!({"enabled": false})))
        .collect();
    let (code, body) = fx.send("PATCH", "/v1/generators", json!({"perEngine": per_engine}));
    assert_eq!(code, 200, "{body}");
    let (code, body) = fx.send("POST", "/v1/query", json!({"prompt": "a red circle", "n": 3}));
    assert_eq!(code, 503);
    let err: ErrorBody = serde_json::from_str(&body).unwrap();
    assert_eq!(err.error, "AllEnginesFailed");
    let mut named: Vec<_> = err.causes.iter().map(|c| c.engine.clone()).collect();
    named.sort();
    let mut all: Vec<_> = gens.engines.iter().map(|e| e.name.clone()).collect();
    all.sort();
    assert_eq!(named, all);
}

#[test]
fn directory_lifecycle_and_errors() {
    let fx = Fixture::new();
    let dir = tempfile::tempdir().unwrap();
    write_images(dir.path(), 12);
    let (code, body) = fx.send("POST", "/v1/directories", json!({"path": dir.path()}));
    assert_eq!(code, 202, "{body}");
    let view: DirectoryView = serde_json::from_str(&body).unwrap();
    assert_eq!(view.total, 12);
    let done = wait_for_progress(&fx, view.id);
    assert_eq!((done.done, done.total, done.progress), (12, 12, 1.0));

    assert_eq!(fx.send("POST", "/v1/directories", json!({"path": dir.path()})).0, 409);
    let (code, body) = fx.send("POST", "/v1/directories", json!({"path": "/definitely/not/here"}));
    assert_eq!(code, 400);
    assert!(body.contains("PathNotFound"), "{body}");
    assert_eq!(fx.send("POST", "/v1/directories", json!({"path": "relative"})).0, 400);
    assert_eq!(fx.send("POST", "/v1/directories", json!({"dir": "/tmp"})).0, 400);

    let (code, body) = fx.send("PATCH", &format!("/v1/directories/{}", view.id), json!({"enabled": false}));
    assert_eq!(code, 200, "{body}");
    assert!(!serde_json::from_str::<DirectoryView>(&body).unwrap().enabled);

    let list: Vec<DirectoryView> = serde_json::from_str(&fx.get("/v1/directories").1).unwrap();
    assert_eq!(list.len(), 1);
    assert_eq!(fx.send("DELETE", &format!("/v1/directories/{}", view.id), json!({})).0, 204);
    assert_eq!(fx.get(&format!("/v1/directories/{}", view.id)).0, 404);
    assert_eq!(fx.send("DELETE", &format!("/v1/directories/{}", view.id), json!({})).0, 404);
    assert_eq!(fx.send("PATCH", "/v1/directories/999", json!({"enabled": true})).0, 404);
}

#[test]
fn generator_reorder_and_conflicts() {
    let fx = Fixture::new();
    let gens: Generators = serde_json::from_str(&fx.get("/v1/generators").1).unwrap();
    assert!(gens.engines.len() >= 2, "{gens:?}");
    let mut names: Vec<String> = gens.engines.iter().map(|e| e.name.clone()).collect();
    names.reverse();

    let (code, body) = fx.send("PATCH", "/v1/generators", json!({"orderedNames": ["nosuch"]}));
    assert_eq!(code, 400, "{body}");
    let unchanged: Generators = serde_json::from_str(&fx.get("/v1/generators").1).unwrap();
    assert_eq!(unchanged, gens);

    let (code, body) = fx.send(
        "PATCH",
        "/v1/generators",
        json!({"orderedNames": names, "revision": gens.revision}),
    );
    assert_eq!(code, 200, "{body}");
    let after: Generators = serde_json::from_str(&fx.get("/v1/generators").1).unwrap();
    let order: Vec<_> = after.engines.iter().map(|e| (e.name.clone(), e.priority)).collect();
    let want: Vec<_> = names.iter().cloned().zip(0..).collect();
    assert_eq!(order, want);

    // replaying the old token conflicts
    let (code, _) = fx.send(
        "PATCH",
        "/v1/generators",
        json!({"orderedNames": names, "revision": gens.revision}),
    );
    assert_eq!(code, 409);

    // concurrent writers holding the same token: exactly one wins
    let token = after.revision;
    let codes: Vec<u16> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..2)
            .map(|i| {
                let fx = &fx;
                let names = &names;
                s.spawn(move || {
                    let first = names[i % names.len()].clone();
                    fx.send("PATCH", "/v1/generators", json!({"orderedNames": [first], "revision": token}))
                        .0
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut sorted = codes.clone();
    sorted.sort();
    assert_eq!(sorted, vec![200, 409], "{codes:?}");
}

#[test]
fn shutdown_endpoint_stops_the_server() {
    let fx = Fixture::new();
    let (code, _) = fx.send("POST", "/v1/shutdown", json!({}));
    assert_eq!(code, 202);
    let Fixture { _home, server } = fx;
    server.wait().unwrap();
}
