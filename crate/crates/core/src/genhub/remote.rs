//! Generic HTTP generation engine.
//!
//! Request: `POST <endpoint>` with
//! `{"prompt": str, "m": int, "resolution": "SMALL"|"MEDIUM"|"LARGE", "size": int, "seed": int|null, "seeds": [int]}`.
//! Response: `{"images": [<base64 png>...]}` holding exactly `m` square
//! images of `size` pixels.

use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{Engine, EngineFailure, GenRequest, Resolution};
use crate::pixels::ImagePixels;

pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;

pub struct RemoteEngine {
    name: String,
    endpoint: String,
    timeout: Duration,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    m: usize,
    resolution: Resolution,
    size: u32,
    seed: Option<u64>,
    seeds: &'a [u64],
}

#[derive(Deserialize)]
struct WireResponse {
    images: Vec<String>,
}

impl RemoteEngine {
    pub fn new(name: &str, endpoint: &str, timeout_ms: u64) -> Self {
        let timeout = Duration::from_millis(timeout_ms.max(1));
        Self {
            name: name.to_string(),
            endpoint: endpoint.to_string(),
            timeout,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

fn is_timeout(err: &ureq::Transport) -> bool {
    let mut source = std::error::Error::source(err);
    while let Some(e) = source {
        if let Some(io) = e.downcast_ref::<std::io::Error>() {
            return matches!(
                io.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            );
        }
        source = e.source();
    }
    err.to_string().contains("timed out")
}

impl Engine for RemoteEngine {
    fn name(&self) -> &str {
        &self.name
    }

    fn render(&self, request: &GenRequest, seeds: &[u64]) -> Result<Vec<ImagePixels>, EngineFailure> {
        let body = WireRequest {
            prompt: &request.prompt,
            m: request.m,
            resolution: request.resolution,
            size: request.resolution.side(),
            seed: request.seed,
            seeds,
        };
        let resp = match self.agent.post(&self.endpoint).send_json(&body) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, _)) => return Err(EngineFailure::HttpError(code)),
            Err(ureq::Error::Transport(t)) if is_timeout(&t) => {
                return Err(EngineFailure::Timeout(self.timeout.as_millis() as u64))
            }
            Err(ureq::Error::Transport(t)) => return Err(EngineFailure::Transport(t.to_string())),
        };
        let wire: WireResponse = resp.into_json().map_err(|e| {
            if e.kind() == std::io::ErrorKind::TimedOut || e.kind() == std::io::ErrorKind::WouldBlock {
                EngineFailure::Timeout(self.timeout.as_millis() as u64)
            } else {
                EngineFailure::BadResponse(format!("undecodable body: {e}"))
            }
        })?;
        if wire.images.len() != request.m {
            return Err(EngineFailure::BadResponse(format!(
                "expected {} images, got {}",
                request.m,
                wire.images.len()
            )));
        }
        let side = request.resolution.side();
        let b64 = base64::engine::general_purpose::STANDARD;
        wire.images
            .iter()
            .enumerate()
            .map(|(i, text)| {
                let bytes = b64
                    .decode(text.trim())
                    .map_err(|e| EngineFailure::BadResponse(format!("image {i}: {e}")))?;
                let img = ImagePixels::decode(&bytes)
                    .map_err(|e| EngineFailure::BadResponse(format!("image {i}: {e}")))?;
                if img.width() != side || img.height() != side {
                    return Err(EngineFailure::BadResponse(format!(
                        "image {i} is {}x{}, expected {side}x{side}",
                        img.width(),
                        img.height()
                    )));
                }
                Ok(img)
            })
            .collect()
    }
}
