//! Completion clients. Only [`HttpClient`] touches the network, and it is
//! constructed explicitly; nothing here reads the environment on its own
//! except [`HttpClient::from_env`].

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionRequest {
    pub id: String,
    pub prompt: String,
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("no replay fixture for request `{0}`")]
    NoFixture(String),
    #[error("completion client disabled")]
    Disabled,
    #[error("environment variable {0} is not set")]
    MissingEnv(&'static str),
    #[error("completion request failed: {0}")]
    Transport(String),
    #[error("malformed completion response: {0}")]
    Response(String),
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub trait CompletionClient {
    fn complete(&self, req: &CompletionRequest) -> Result<String, ClientError>;
}

pub const SHIPPED_FIXTURES: [(&str, &str); 7] = [
    ("slope_valid", include_str!("../../assets/fixtures/slope_valid.txt")),
    ("step_valid", include_str!("../../assets/fixtures/step_valid.txt")),
    ("clearance_valid", include_str!("../../assets/fixtures/clearance_valid.txt")),
    ("invalid_grammar", include_str!("../../assets/fixtures/invalid_grammar.txt")),
    ("invalid_unknown_builtin", include_str!("../../assets/fixtures/invalid_unknown_builtin.txt")),
    ("invalid_arity", include_str!("../../assets/fixtures/invalid_arity.txt")),
    ("invalid_inverted", include_str!("../../assets/fixtures/invalid_inverted.txt")),
];

/// Canned responses keyed by request id.
#[derive(Debug, Clone, Default)]
pub struct ReplayClient {
    responses: BTreeMap<String, String>,
}

impl ReplayClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn shipped() -> Self {
        let mut c = Self::new();
        for (id, text) in SHIPPED_FIXTURES {
            c.insert(id, text);
        }
        c
    }

    pub fn insert(&mut self, id: impl Into<String>, response: impl Into<String>) {
        self.responses.insert(id.into(), response.into());
    }

    /// Loads one response file, keyed by its file stem.
    pub fn from_file(path: &Path) -> Result<(String, Self), ClientError> {
        let text = std::fs::read_to_string(path).map_err(|source| ClientError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "response".into());
        let mut c = Self::new();
        c.insert(id.clone(), text);
        Ok((id, c))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.responses.keys().map(String::as_str)
    }
}

impl CompletionClient for ReplayClient {
    fn complete(&self, req: &CompletionRequest) -> Result<String, ClientError> {
        self.responses
            .get(&req.id)
            .cloned()
            .ok_or_else(|| ClientError::NoFixture(req.id.clone()))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NullClient;

impl CompletionClient for NullClient {
    fn complete(&self, _: &CompletionRequest) -> Result<String, ClientError> {
        Err(ClientError::Disabled)
    }
}

pub const ENV_ENDPOINT: &str = "MAPVERIFY_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "MAPVERIFY_LLM_MODEL";
pub const ENV_API_KEY: &str = "MAPVERIFY_LLM_API_KEY";

/// Chat-completion client: one user message, temperature 0.
#[derive(Debug, Clone)]
pub struct HttpClient {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        HttpClient {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            timeout: Duration::from_secs(120),
        }
    }

    pub fn from_env() -> Result<Self, ClientError> {
        let var = |name: &'static str| std::env::var(name).map_err(|_| ClientError::MissingEnv(name));
        Ok(Self::new(var(ENV_ENDPOINT)?, var(ENV_MODEL)?, std::env::var(ENV_API_KEY).ok()))
    }

    pub fn request_body(&self, prompt: &str) -> serde_json::Value {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        })
    }
}

impl CompletionClient for HttpClient {
    fn complete(&self, req: &CompletionRequest) -> Result<String, ClientError> {
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let mut call = agent.post(&self.endpoint).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = call
            .send_json(self.request_body(&req.prompt))
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let body: serde_json::Value = resp.into_json().map_err(|e| ClientError::Response(e.to_string()))?;
        body.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| ClientError::Response("no choices[0].message.content".into()))
    }
}
