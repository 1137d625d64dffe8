use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;
use std::time::Duration;

use needle_api::wire::{DirectoryView, Generators, QueryResponse, StatusReport};
use needle_api::{Backend, BackendOptions, RunningServer};
use needle_core::config::{Mode, Paths};
use needle_core::genhub::{mock_render, SceneSpec};
use needle_core::ingest::IngestConfig;
use proptest::prelude::*;

struct Fixture {
    home: tempfile::TempDir,
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
            ..BackendOptions::default()
        };
        let backend = Arc::new(Backend::open(Paths::new(home.path(), None), options).unwrap());
        backend.start_indexing().unwrap();
        let server = RunningServer::start(backend, "127.0.0.1:0").unwrap();
        Self { home, server }
    }

    fn run(&self, args: &[&str]) -> Output {
        needlectl(self.home.path(), &self.server.addr.to_string(), args)
    }

    fn images(&self, count: usize) -> String {
        let dir = self.home.path().join("pictures");
        std::fs::create_dir_all(&dir).unwrap();
        let space = SceneSpec::all();
        for i in 0..count {
            mock_render(&space[i * 5 % space.len()], i as u64, 64)
                .save_png(&dir.join(format!("p{i:02}.png")))
                .unwrap();
        }
        dir.to_str().unwrap().to_string()
    }
}

fn needlectl(home: &Path, api: &str, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_needlectl"))
        .args(args)
        .env("NEEDLE_HOME", home)
        .env("NEEDLE_API_ADDR", api)
        .env_remove("NEEDLE_DATA_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// An address nobody listens on.
fn dead_addr() -> String {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().to_string()
}

#[test]
fn directory_commands_round_trip() {
    let fx = Fixture::new();
    let dir = fx.images(12);

    let add = fx.run(&["directory", "add", &dir, "--progress", "--output", "structured"]);
    assert_eq!(add.status.code(), Some(0), "{}", stderr(&add));
    let view: DirectoryView = serde_json::from_str(&stdout(&add)).unwrap();
    assert_eq!(view.progress, 1.0);
    assert_eq!(view.image_count, 12);

    let again = fx.run(&["directory", "add", &dir]);
    assert_eq!(again.status.code(), Some(1));
    assert!(stderr(&again).contains("409"), "{}", stderr(&again));

    let id = view.id.to_string();
    let off = fx.run(&["directory", "modify", &id, "--set", "enabled=false", "--output", "structured"]);
    assert_eq!(off.status.code(), Some(0), "{}", stderr(&off));
    assert!(!serde_json::from_str::<DirectoryView>(&stdout(&off)).unwrap().enabled);

    let bad_key = fx.run(&["directory", "modify", &id, "--set", "colour=red"]);
    assert_eq!(bad_key.status.code(), Some(2), "{}", stderr(&bad_key));

    let list = fx.run(&["directory", "list", "--output", "structured"]);
    let dirs: Vec<DirectoryView> = serde_json::from_str(&stdout(&list)).unwrap();
    assert_eq!(dirs.len(), 1);

    let removed = fx.run(&["directory", "remove", &id]);
    assert_eq!(removed.status.code(), Some(0));
    assert_eq!(stdout(&removed).trim(), format!("removed directory {id}"));
    let gone = fx.run(&["directory", "describe", &id]);
    assert_eq!(gone.status.code(), Some(1));
    assert!(stderr(&gone).contains("404"), "{}", stderr(&gone));
}

#[test]
fn relative_and_missing_paths_are_rejected() {
    let fx = Fixture::new();
    let missing = fx.run(&["directory", "add", "/definitely/not/here"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).contains("PathNotFound"), "{}", stderr(&missing));
}

#[test]
fn generator_config_reorders_and_toggles() {
    let fx = Fixture::new();
    let before: Generators =
        serde_json::from_str(&stdout(&fx.run(&["generator", "list", "--output", "structured"]))).unwrap();
    let last = before.engines.last().unwrap().name.clone();

    let out = fx.run(&[
        "generator",
        "config",
        "--order",
        &last,
        "--set",
        &format!("{last}.enabled=true"),
        "--output",
        "structured",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let after: Generators = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(after.engines[0].name, last);
    assert!(after.engines[0].enabled);
    assert!(after.revision > before.revision);

    let unknown = fx.run(&["generator", "config", "--order", "nonesuch"]);
    assert_eq!(unknown.status.code(), Some(1));
    let malformed = fx.run(&["generator", "config", "--set", "mock=on"]);
    assert_eq!(malformed.status.code(), Some(2));
    let empty = fx.run(&["generator", "config"]);
    assert_eq!(empty.status.code(), Some(2));
}

#[test]
fn structured_output_is_one_document() {
    let fx = Fixture::new();
    let dir = fx.images(8);
    assert!(fx.run(&["directory", "add", &dir, "--progress"]).status.success());
    for args in [
        vec!["service", "status"],
        vec!["directory", "list"],
        vec!["generator", "list"],
        vec!["query", "run", "a blue square", "-n", "3", "--verbose"],
        vec!["--version"],
    ] {
        let mut full = args.clone();
        full.extend(["--output", "structured"]);
        let out = fx.run(&full);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", stderr(&out));
        let text = stdout(&out);
        let mut docs = serde_json::Deserializer::from_str(&text).into_iter::<serde_json::Value>();
        assert!(docs.next().unwrap().is_ok(), "{args:?}");
        assert!(docs.next().is_none(), "{args:?} printed more than one document");
    }
    let status: StatusReport =
        serde_json::from_str(&stdout(&fx.run(&["service", "status", "--output", "structured"]))).unwrap();
    assert!(!status.services.is_empty());
}

#[test]
fn query_preview_link_carries_the_prompt() {
    let fx = Fixture::new();
    let dir = fx.images(8);
    assert!(fx.run(&["directory", "add", &dir, "--progress"]).status.success());
    let out = fx.run(&["query", "run", "red & blue", "-n", "3", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let preview = text.lines().last().unwrap();
    assert!(preview.starts_with("preview: http://"), "{preview}");
    assert!(preview.contains("q=red+%26+blue") && preview.ends_with("n=3"), "{preview}");

    let structured = fx.run(&["query", "run", "red & blue", "-n", "3", "--seed", "1", "--output", "structured"]);
    let r: QueryResponse = serde_json::from_str(&stdout(&structured)).unwrap();
    assert_eq!(r.results.len(), 3);
}

#[test]
fn cli_conf_sets_the_address_and_rejects_unknown_keys() {
    let fx = Fixture::new();
    std::fs::write(fx.home.path().join("cli.conf"), format!("# local\napi_addr = {}\n", fx.server.addr)).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_needlectl"))
        .args(["service", "status"])
        .env("NEEDLE_HOME", fx.home.path())
        .env_remove("NEEDLE_API_ADDR")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    std::fs::write(fx.home.path().join("cli.conf"), "colour = blue\n").unwrap();
    let bad = fx.run(&["service", "status"]);
    assert_ne!(bad.status.code(), Some(0));
    assert!(stderr(&bad).contains("colour"), "{}", stderr(&bad));
}

#[derive(Debug, Clone)]
enum Invocation {
    /// Well formed, but needs a running backend.
    NeedsBackend(Vec<String>),
    /// Rejected before any request is made.
    Malformed(Vec<String>),
}

fn invocation() -> impl Strategy<Value = Invocation> {
    let prompt = "[a-z]{1,8}( [a-z]{1,8}){0,2}";
    let needs_backend = prop_oneof![
        (prompt, 1u64..50).prop_map(|(p, n)| vec!["query".into(), "run".into(), p, "-n".into(), n.to_string()]),
        (prompt, 1u64..4).prop_map(|(p, m)| vec!["query".into(), "run".into(), p, "--m".into(), m.to_string()]),
        Just(vec!["directory".into(), "list".into()]),
        (1i64..1000).prop_map(|id| vec!["directory".into(), "describe".into(), id.to_string()]),
        Just(vec!["generator".into(), "list".into()]),
        Just(vec!["service".into(), "status".into()]),
    ];
    let malformed = prop_oneof![
        prompt.prop_map(|p| vec!["query".into(), "run".into(), p, "-n".into(), "0".into()]),
        prompt.prop_map(|p| vec!["query".into(), "run".into(), p, "--m".into(), "0".into()]),
        "[a-z]{3,8}".prop_filter("not a command", |w| {
            !["service", "directory", "query", "generator", "ui", "bench", "help"].contains(&w.as_str())
        })
        .prop_map(|w| vec![w]),
        "[a-z]{3,8}".prop_map(|w| vec!["query".into(), format!("x{w}")]),
        (1i64..1000).prop_map(|id| vec!["directory".into(), "describe".into(), format!("#{id}")]),
        Just(vec!["directory".into(), "add".into()]),
        Just(vec!["query".into(), "run".into(), "x".into(), "--resolution".into(), "HUGE".into()]),
    ];
    prop_oneof![
        needs_backend.prop_map(Invocation::NeedsBackend),
        malformed.prop_map(Invocation::Malformed),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exit_codes_separate_usage_from_runtime_errors(inv in invocation()) {
        let home = tempfile::tempdir().unwrap();
        let (args, expected) = match &inv {
            Invocation::NeedsBackend(a) => (a, 1),
            Invocation::Malformed(a) => (a, 2),
        };
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = needlectl(home.path(), &dead_addr(), &args);
        prop_assert_eq!(out.status.code(), Some(expected), "{:?}: {}", inv, stderr(&out));
        prop_assert!(!out.stderr.is_empty());
    }
}
