//! HTTP embedder client.
//!
//! Request: `POST <url>` with `{"model": <name>, "images": [<base64 png>...]}`.
//! Response: `{"vectors": [[f32; dim]...]}` aligned with the request images.

use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{Embedder, EmbedderError, EmbedderSpec, Result};
use crate::limit::InFlight;
use crate::pixels::ImagePixels;

const REQUEST_TIMEOUT: Duration = Duration::from_secs(30);

pub struct RemoteEmbedder {
    spec: EmbedderSpec,
    url: String,
    agent: ureq::Agent,
    gate: InFlight,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    images: Vec<String>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

impl RemoteEmbedder {
    pub fn new(spec: EmbedderSpec, url: String, max_in_flight: usize) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(REQUEST_TIMEOUT).build();
        Self {
            spec,
            url,
            agent,
            gate: InFlight::new(max_in_flight),
        }
    }

    fn unavailable(&self, reason: impl ToString) -> EmbedderError {
        EmbedderError::EmbedderUnavailable {
            name: self.spec.name.clone(),
            reason: reason.to_string(),
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    fn embed_unchecked(&self, images: &[ImagePixels]) -> Result<Vec<Vec<f32>>> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let images = images
            .iter()
            .map(|img| img.to_png().map(|png| b64.encode(png)))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| self.unavailable(e))?;
        let body = EmbedRequest {
            model: &self.spec.name,
            images,
        };
        let _permit = self.gate.acquire();
        let resp = self
            .agent
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| self.unavailable(e))?;
        let parsed: EmbedResponse = resp
            .into_json()
            .map_err(|e| self.unavailable(format!("bad response: {e}")))?;
        Ok(parsed.vectors)
    }
}
