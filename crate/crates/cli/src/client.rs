//! Blocking client for the `/v1` API.

use std::fmt;
use std::time::Duration;

use needle_api::wire::{
    AddDirectory, DirectoryView, ErrorBody, Generators, PatchDirectory, PatchGenerators, QueryRequest,
    QueryResponse, StatusReport, Versions,
};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug)]
pub enum ClientError {
    /// Nothing answered at the address.
    Unreachable { addr: String, detail: String },
    /// The API answered with a non-2xx status.
    Api { status: u16, body: ErrorBody },
    /// The API answered with something we cannot read.
    Protocol(String),
}

impl fmt::Display for ClientError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClientError::Unreachable { addr, detail } => {
                write!(f, "backend unreachable at {addr}: {detail}")
            }
            ClientError::Api { status, body } => {
                if body.message.starts_with(&body.error) {
                    write!(f, "{} (HTTP {status})", body.message)?;
                } else {
                    write!(f, "{}: {} (HTTP {status})", body.error, body.message)?;
                }
                for c in &body.causes {
                    write!(f, "\n  {}: {}", c.engine, c.reason)?;
                }
                Ok(())
            }
            ClientError::Protocol(msg) => write!(f, "unexpected response: {msg}"),
        }
    }
}

impl std::error::Error for ClientError {}

pub type Result<T> = std::result::Result<T, ClientError>;

pub struct Client {
    addr: String,
    agent: ureq::Agent,
}

impl Client {
    pub fn new(addr: &str) -> Self {
        Self {
            addr: addr.to_string(),
            agent: ureq::AgentBuilder::new()
                .timeout_connect(Duration::from_secs(2))
                .timeout(Duration::from_secs(120))
                .build(),
        }
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    fn call(&self, request: ureq::Request, body: Option<serde_json::Value>) -> Result<ureq::Response> {
        let sent = match body {
            Some(b) => request.send_json(b),
            None => request.call(),
        };
        match sent {
            Ok(r) => Ok(r),
            Err(ureq::Error::Status(status, r)) => {
                let text = r.into_string().unwrap_or_default();
                let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
                    error: "HttpError".into(),
                    message: text,
                    causes: Vec::new(),
                });
                Err(ClientError::Api { status, body })
            }
            Err(e) => Err(ClientError::Unreachable {
                addr: self.addr.clone(),
                detail: e.to_string(),
            }),
        }
    }

    fn request(&self, method: &str, path: &str) -> ureq::Request {
        self.agent.request(method, &format!("{}{path}", self.base_url()))
    }

    fn json<T: DeserializeOwned>(&self, method: &str, path: &str, body: Option<impl Serialize>) -> Result<T> {
        let body = body.map(|b| serde_json::to_value(b).expect("request bodies serialize"));
        let response = self.call(self.request(method, path), body)?;
        response
            .into_json()
            .map_err(|e| ClientError::Protocol(e.to_string()))
    }

    pub fn health(&self) -> Result<String> {
        let response = self.call(self.request("GET", "/v1/health"), None)?;
        response
            .into_string()
            .map_err(|e| ClientError::Protocol(e.to_string()))
    }

    pub fn version(&self) -> Result<Versions> {
        self.json("GET", "/v1/version", None::<()>)
    }

    pub fn status(&self) -> Result<StatusReport> {
        self.json("GET", "/v1/status", None::<()>)
    }

    pub fn query(&self, req: &QueryRequest) -> Result<QueryResponse> {
        self.json("POST", "/v1/query", Some(req))
    }

    pub fn add_directory(&self, path: &str) -> Result<DirectoryView> {
        self.json("POST", "/v1/directories", Some(AddDirectory { path: path.into() }))
    }

    pub fn directories(&self) -> Result<Vec<DirectoryView>> {
        self.json("GET", "/v1/directories", None::<()>)
    }

    pub fn directory(&self, id: i64) -> Result<DirectoryView> {
        self.json("GET", &format!("/v1/directories/{id}"), None::<()>)
    }

    pub fn patch_directory(&self, id: i64, patch: &PatchDirectory) -> Result<DirectoryView> {
        self.json("PATCH", &format!("/v1/directories/{id}"), Some(patch))
    }

    pub fn remove_directory(&self, id: i64) -> Result<()> {
        self.call(self.request("DELETE", &format!("/v1/directories/{id}")), None)
            .map(|_| ())
    }

    pub fn generators(&self) -> Result<Generators> {
        self.json("GET", "/v1/generators", None::<()>)
    }

    pub fn patch_generators(&self, patch: &PatchGenerators) -> Result<Generators> {
        self.json("PATCH", "/v1/generators", Some(patch))
    }

    pub fn shutdown(&self) -> Result<()> {
        self.call(self.request("POST", "/v1/shutdown"), None).map(|_| ())
    }
}
