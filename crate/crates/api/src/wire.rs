//! JSON bodies of the `/v1` endpoints, shared by server and clients.

use std::collections::BTreeMap;

use needle_core::config::ComponentVersion;
use needle_core::genhub::Resolution;
use serde::{Deserialize, Serialize};

/// Scores and LOF values travel with 9 significant digits, so the decimal
/// text on the wire parses back to exactly the value the server rounded to.
pub const SCORE_DIGITS: usize = 9;

pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SCORE_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct QueryRequest {
    pub prompt: String,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overrides: Option<QueryOverrides>,
    /// Fixes the guide seeds; random when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct QueryOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engines: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QueryResponse {
    pub prompt: String,
    pub results: Vec<ResultItem>,
    pub guides: Vec<GuideRef>,
    pub sources: Vec<SourceList>,
    pub timings: StageTimings,
    pub plan: PlanEcho,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResultItem {
    pub rank: usize,
    pub image_id: u64,
    pub path: String,
    pub score: f64,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GuideRef {
    pub id: String,
    pub engine_name: String,
    pub seed: u64,
    pub kept: bool,
    pub mean_lof: Option<f64>,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SourceList {
    pub guide_index: usize,
    pub guide_id: String,
    pub embedder: String,
    pub dropped: bool,
    pub hits: Vec<SourceHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SourceHit {
    pub rank: usize,
    pub image_id: u64,
    /// Absent when the image left the catalog after it was ranked.
    pub path: Option<String>,
    pub distance: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StageTimings {
    pub generate_ms: f64,
    pub search_ms: f64,
    pub fuse_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PlanEcho {
    pub m: usize,
    pub l: usize,
    pub k: usize,
    pub kappa: f64,
    pub resolution: Resolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DirectoryView {
    pub id: i64,
    pub path: String,
    pub enabled: bool,
    pub created_at_ms: i64,
    pub image_count: u64,
    pub done: u64,
    pub total: u64,
    pub progress: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddDirectory {
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchDirectory {
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GeneratorView {
    pub name: String,
    pub kind: String,
    pub priority: i64,
    pub enabled: bool,
    pub healthy: bool,
    pub consecutive_failures: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generators {
    pub revision: u64,
    pub engines: Vec<GeneratorView>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PatchGenerators {
    /// Rejected with 409 when stale; unconditional when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revision: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordered_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_engine: Option<BTreeMap<String, EngineFlags>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineFlags {
    pub enabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceState {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StatusReport {
    pub api_healthy: bool,
    pub mode: String,
    pub services: BTreeMap<String, ServiceState>,
    pub directories: Vec<DirectoryView>,
    pub generators: Vec<GeneratorView>,
    pub versions: Vec<ComponentVersion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Versions {
    pub components: Vec<ComponentVersion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cause {
    pub engine: String,
    pub reason: String,
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    /// Stable machine-readable kind, e.g. `PathNotFound`.
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub causes: Vec<Cause>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits_round_trip() {
        for x in [1.0 / 61.0 + 1.0 / 62.0, 2.0 / 61.0, 123456.789012345, 1e-12 / 3.0] {
            let r = round_sig(x);
            let text = serde_json::to_string(&r).unwrap();
            let digits: String = text
                .trim_start_matches("0.")
                .chars()
                .take_while(|c| *c != 'e')
                .filter(|c| c.is_ascii_digit())
                .collect();
            assert!(digits.trim_start_matches('0').len() <= 9, "{text}");
            assert_eq!(serde_json::from_str::<f64>(&text).unwrap(), r);
            assert!(((r - x) / x).abs() < 1e-8);
        }
        assert_eq!(round_sig(0.0), 0.0);
    }

    #[test]
    fn query_request_rejects_unknown_fields() {
        assert!(serde_json::from_str::<QueryRequest>(r#"{"prompt":"a","n":1,"x":2}"#).is_err());
        let r: QueryRequest =
            serde_json::from_str(r#"{"prompt":"a","n":3,"overrides":{"m":2,"resolution":"SMALL"}}"#).unwrap();
        assert_eq!(r.overrides.unwrap().resolution, Some(Resolution::Small));
    }
}
