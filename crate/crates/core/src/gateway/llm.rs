//! Text-completion backends for prompt-based scoring and rewrites.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::BackendError;
use crate::features::fnv1a;
use crate::io::sha256_hex;

pub const API_KEY_ENV: &str = "FACTLENS_LLM_API_KEY";
pub const FALLBACK_API_KEY_ENV: &str = "OPENAI_API_KEY";
pub const BASE_URL_ENV: &str = "FACTLENS_LLM_BASE_URL";
pub const MODEL_ENV: &str = "FACTLENS_LLM_MODEL";

pub trait TextCompletion: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, BackendError>;

    /// Whether calls leave the process. Offline runs reject such backends.
    fn requires_network(&self) -> bool {
        true
    }
}

impl<F> TextCompletion for F
where
    F: Fn(&str) -> Result<String, BackendError> + Send + Sync,
{
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        self(prompt)
    }

    fn requires_network(&self) -> bool {
        false
    }
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint with
/// temperature 0.
pub struct ChatCompletionsClient {
    base_url: String,
    model: String,
    api_key: String,
    agent: ureq::Agent,
}

impl ChatCompletionsClient {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key: api_key.into(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(120)).build(),
        }
    }

    /// Reads the key from `FACTLENS_LLM_API_KEY` (or `OPENAI_API_KEY`), the
    /// base URL from `FACTLENS_LLM_BASE_URL` and the model from
    /// `FACTLENS_LLM_MODEL`.
    pub fn from_env() -> Result<Self, BackendError> {
        let key = std::env::var(API_KEY_ENV)
            .or_else(|_| std::env::var(FALLBACK_API_KEY_ENV))
            .map_err(|_| BackendError::MissingCredentials(API_KEY_ENV))?;
        let base = std::env::var(BASE_URL_ENV).unwrap_or_else(|_| "https://api.openai.com/v1".into());
        let model = std::env::var(MODEL_ENV).unwrap_or_else(|_| "gpt-4".into());
        Ok(Self::new(base, model, key))
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: [ChatMessage<'a>; 1],
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: Option<String>,
}

impl TextCompletion for ChatCompletionsClient {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let body = serde_json::to_string(&ChatRequest {
            model: &self.model,
            temperature: 0.0,
            messages: [ChatMessage { role: "user", content: prompt }],
        })
        .expect("chat request serializes");
        let resp = self
            .agent
            .post(&format!("{}/chat/completions", self.base_url))
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .set("Content-Type", "application/json")
            .send_string(&body)
            .map_err(super::remote::map_ureq_error)?;
        let text = resp.into_string().map_err(|e| BackendError::Transport(e.to_string()))?;
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| BackendError::Protocol(format!("chat response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Protocol("chat response has no content".into()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FixtureLine {
    request: String,
    reply: String,
}

/// Replays recorded replies keyed by the SHA-256 of the prompt.
#[derive(Debug, Default)]
pub struct FixtureLlm {
    replies: HashMap<String, String>,
}

impl FixtureLlm {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let mut replies = HashMap::new();
        for (i, line) in std::fs::read_to_string(path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureLine = serde_json::from_str(line).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            replies.insert(rec.request, rec.reply);
        }
        Ok(Self { replies })
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Self { replies: pairs.into_iter().map(|(p, r)| (request_hash(p), r.to_string())).collect() }
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

pub fn request_hash(prompt: &str) -> String {
    sha256_hex(prompt)
}

impl TextCompletion for FixtureLlm {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let key = request_hash(prompt);
        self.replies.get(&key).cloned().ok_or(BackendError::FixtureMissing(key))
    }

    fn requires_network(&self) -> bool {
        false
    }
}

/// Wraps a live backend and appends every new reply to a fixture file.
pub struct RecordingLlm<L> {
    inner: L,
    path: PathBuf,
    seen: RwLock<HashMap<String, String>>,
    writer: Mutex<()>,
}

impl<L: TextCompletion> RecordingLlm<L> {
    pub fn new(inner: L, path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        let seen = if path.exists() { FixtureLlm::load(&path)?.replies } else { HashMap::new() };
        Ok(Self { inner, path, seen: RwLock::new(seen), writer: Mutex::new(()) })
    }
}

impl<L: TextCompletion> TextCompletion for RecordingLlm<L> {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let key = request_hash(prompt);
        if let Some(r) = self.seen.read().expect("fixture lock").get(&key) {
            return Ok(r.clone());
        }
        let reply = self.inner.complete(prompt)?;
        let _guard = self.writer.lock().expect("fixture writer");
        let line = serde_json::to_string(&FixtureLine { request: key.clone(), reply: reply.clone() })
            .expect("fixture serializes");
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| BackendError::Other(format!("fixture write: {e}")))?;
        writeln!(f, "{line}").map_err(|e| BackendError::Other(format!("fixture write: {e}")))?;
        self.seen.write().expect("fixture lock").insert(key, reply.clone());
        Ok(reply)
    }

    fn requires_network(&self) -> bool {
        self.inner.requires_network()
    }
}

/// Offline stand-in for a rating LLM: replies with an integer in 1..=100
/// derived from an FNV-1a hash of the prompt. Only for exercising the
/// pipeline without network access.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashStubLlm;

impl TextCompletion for HashStubLlm {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        Ok(format!("{}", 1 + fnv1a(prompt.as_bytes()) % 100))
    }

    fn requires_network(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_replay_by_prompt_hash() {
        let llm = FixtureLlm::from_pairs([("hello", "world")]);
        assert_eq!(llm.complete("hello").unwrap(), "world");
        assert!(matches!(llm.complete("other"), Err(BackendError::FixtureMissing(_))));
        assert!(!llm.requires_network());
    }

    #[test]
    fn recording_writes_replayable_fixtures() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fx.jsonl");
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let live = |p: &str| {
            calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            Ok(format!("reply to {p}"))
        };
        let rec = RecordingLlm::new(live, &path).unwrap();
        assert_eq!(rec.complete("a").unwrap(), "reply to a");
        assert_eq!(rec.complete("a").unwrap(), "reply to a");
        assert_eq!(calls.load(std::sync::atomic::Ordering::SeqCst), 1);
        let replay = FixtureLlm::load(&path).unwrap();
        assert_eq!(replay.complete("a").unwrap(), "reply to a");
    }

    #[test]
    fn hash_stub_is_deterministic_and_in_range() {
        for p in ["x", "y", "a longer prompt"] {
            let a: u32 = HashStubLlm.complete(p).unwrap().parse().unwrap();
            assert_eq!(HashStubLlm.complete(p).unwrap(), a.to_string());
            assert!((1..=100).contains(&a));
        }
    }

    #[test]
    fn missing_credentials_reported() {
        if std::env::var(API_KEY_ENV).is_err() && std::env::var(FALLBACK_API_KEY_ENV).is_err() {
            assert!(matches!(ChatCompletionsClient::from_env(), Err(BackendError::MissingCredentials(_))));
        }
    }
}
