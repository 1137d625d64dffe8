use std::thread::JoinHandle;

use base64::Engine as _;
use needle_core::genhub::{
    Engine, EngineFailure, EngineSpec, GenError, GenHub, GenRequest, RemoteEngine, Resolution,
};
use needle_core::pixels::ImagePixels;

enum Reply {
    Images(usize),
    Status(u16),
    Sleep(u64),
}

fn stub(reply: Reply, requests: usize) -> (String, JoinHandle<Vec<serde_json::Value>>) {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}/gen", server.server_addr().to_ip().unwrap());
    let handle = std::thread::spawn(move || {
        let mut seen = Vec::new();
        for _ in 0..requests {
            let mut req = server.recv().unwrap();
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let v: serde_json::Value = serde_json::from_str(&body).unwrap();
            let side = v["size"].as_u64().unwrap() as u32;
            seen.push(v);
            let resp = match reply {
                Reply::Images(n) => {
                    let png = ImagePixels::solid(side, side, [9, 9, 9]).to_png().unwrap();
                    let b64 = base64::engine::general_purpose::STANDARD.encode(png);
                    let body = serde_json::json!({ "images": vec![b64; n] }).to_string();
                    tiny_http::Response::from_string(body)
                }
                Reply::Status(code) => tiny_http::Response::from_string("boom").with_status_code(code),
                Reply::Sleep(ms) => {
                    std::thread::sleep(std::time::Duration::from_millis(ms));
                    tiny_http::Response::from_string("{}")
                }
            };
            let _ = req.respond(resp);
        }
        seen
    });
    (url, handle)
}

fn request(m: usize) -> GenRequest {
    GenRequest {
        prompt: "a cat".into(),
        m,
        resolution: Resolution::Small,
        seed: Some(3),
    }
}

#[test]
fn two_valid_images() {
    let (url, h) = stub(Reply::Images(2), 1);
    let engine = RemoteEngine::new("r", &url, 5_000);
    let imgs = engine.render(&request(2), &[3, 4]).unwrap();
    assert_eq!(imgs.len(), 2);
    let seen = h.join().unwrap();
    assert_eq!(seen[0]["prompt"], "a cat");
    assert_eq!(seen[0]["m"], 2);
    assert_eq!(seen[0]["resolution"], "SMALL");
    assert_eq!(seen[0]["seed"], 3);
}

#[test]
fn status_500_is_http_error_and_falls_back() {
    let (url, h) = stub(Reply::Status(500), 1);
    let hub = GenHub::new(vec![EngineSpec::remote("a", 0, &url), EngineSpec::mock("b", 1)]).unwrap();
    let guides = hub.generate(&request(2), None).unwrap();
    assert!(guides.iter().all(|g| g.engine_name == "b"));
    h.join().unwrap();

    let (url, h) = stub(Reply::Status(500), 1);
    let engine = RemoteEngine::new("r", &url, 5_000);
    assert_eq!(engine.render(&request(1), &[1]), Err(EngineFailure::HttpError(500)));
    h.join().unwrap();
}

#[test]
fn count_mismatch_is_bad_response() {
    let (url, h) = stub(Reply::Images(1), 1);
    let engine = RemoteEngine::new("r", &url, 5_000);
    assert!(matches!(
        engine.render(&request(2), &[1, 2]),
        Err(EngineFailure::BadResponse(_))
    ));
    h.join().unwrap();
}

#[test]
fn slow_server_times_out() {
    let (url, h) = stub(Reply::Sleep(1_500), 1);
    let engine = RemoteEngine::new("r", &url, 200);
    assert_eq!(engine.render(&request(1), &[1]), Err(EngineFailure::Timeout(200)));
    h.join().unwrap();
}

#[test]
fn all_failing_reports_each_cause() {
    let (url, h) = stub(Reply::Status(503), 1);
    let hub = GenHub::new(vec![
        EngineSpec::remote("a", 0, &url),
        EngineSpec::remote("b", 1, "http://127.0.0.1:9/gen"),
    ])
    .unwrap();
    match hub.generate(&request(1), None) {
        Err(GenError::AllEnginesFailed(causes)) => {
            assert_eq!(causes.len(), 2);
            assert_eq!(causes[0].engine, "a");
            assert_eq!(causes[0].cause, EngineFailure::HttpError(503));
            assert!(matches!(causes[1].cause, EngineFailure::Transport(_)));
        }
        other => panic!("{other:?}"),
    }
    h.join().unwrap();
}
