//! Client side of the scorer wire protocol:
//!
//! * `POST /score` `{metric, document, candidate}` → `{score}`
//! * `POST /embed` `{texts: [..]}` → `{vectors: [[..]]}`
//! * `GET /health` → `{status: "ok", metrics: [..]}`
//!
//! An optional bearer token is passed through from `FACTLENS_SIDECAR_TOKEN`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, Scorer};
use crate::features::{FeatureError, SentenceEmbedder};

pub const TOKEN_ENV: &str = "FACTLENS_SIDECAR_TOKEN";

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ScoreRequestBody {
    pub metric: String,
    pub document: String,
    pub candidate: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ScoreResponseBody {
    pub score: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct EmbedRequestBody {
    pub texts: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct EmbedResponseBody {
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct HealthBody {
    pub status: String,
    pub metrics: Vec<String>,
}

pub(crate) fn map_ureq_error(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::Status(429, _) => BackendError::RateLimited,
        ureq::Error::Status(code, resp) => BackendError::Status { code, body: resp.into_string().unwrap_or_default() },
        ureq::Error::Transport(t) => BackendError::Transport(t.to_string()),
    }
}

#[derive(Clone)]
struct HttpClient {
    base_url: String,
    agent: ureq::Agent,
    token: Option<String>,
}

impl HttpClient {
    fn new(base_url: &str) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new()
                .timeout_connect(Duration::from_secs(10))
                .timeout(Duration::from_secs(300))
                .build(),
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
        }
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, path: &str, body: &B) -> Result<R, BackendError> {
        let mut req = self.agent.post(&format!("{}{path}", self.base_url)).set("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.set("Authorization", &format!("Bearer {t}"));
        }
        let body = serde_json::to_string(body).expect("request serializes");
        let resp = req.send_string(&body).map_err(map_ureq_error)?;
        let text = resp.into_string().map_err(|e| BackendError::Transport(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Protocol(format!("{path}: {e}: {text}")))
    }

    fn get<R: for<'de> Deserialize<'de>>(&self, path: &str) -> Result<R, BackendError> {
        let mut req = self.agent.get(&format!("{}{path}", self.base_url));
        if let Some(t) = &self.token {
            req = req.set("Authorization", &format!("Bearer {t}"));
        }
        let resp = req.call().map_err(map_ureq_error)?;
        let text = resp.into_string().map_err(|e| BackendError::Transport(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Protocol(format!("{path}: {e}: {text}")))
    }
}

/// Scores through a sidecar's `/score` endpoint.
#[derive(Clone)]
pub struct RemoteScorer {
    client: HttpClient,
    metric: String,
}

impl RemoteScorer {
    pub fn new(base_url: &str, metric: impl Into<String>) -> Self {
        Self { client: HttpClient::new(base_url), metric: metric.into() }
    }
}

impl Scorer for RemoteScorer {
    fn native_score(&self, document: &str, candidate: &str) -> Result<f64, BackendError> {
        let resp: ScoreResponseBody = self.client.post(
            "/score",
            &ScoreRequestBody {
                metric: self.metric.clone(),
                document: document.to_string(),
                candidate: candidate.to_string(),
            },
        )?;
        Ok(resp.score)
    }

    fn requires_network(&self) -> bool {
        true
    }
}

/// Sentence embeddings from a sidecar's `/embed` endpoint.
#[derive(Clone)]
pub struct RemoteEmbedder {
    client: HttpClient,
}

impl RemoteEmbedder {
    pub fn new(base_url: &str) -> Self {
        Self { client: HttpClient::new(base_url) }
    }
}

impl SentenceEmbedder for RemoteEmbedder {
    fn embed(&self, sentences: &[String]) -> Result<Vec<Vec<f64>>, FeatureError> {
        let resp: EmbedResponseBody = self
            .client
            .post("/embed", &EmbedRequestBody { texts: sentences.to_vec() })
            .map_err(|e| FeatureError::Embedding(e.to_string()))?;
        Ok(resp.vectors)
    }
}

pub fn health(base_url: &str) -> Result<HealthBody, BackendError> {
    HttpClient::new(base_url).get("/health")
}
