//! Versioned prompt templates and reply parsing for direct assessment.

use std::path::Path;

use serde::Deserialize;

use super::llm::TextCompletion;
use super::{BackendError, GatewayError};

const BUILTIN_DA: &str = include_str!("../../data/da_prompts.v1.toml");

/// Fills `{summary}` and `{source}` slots in a single pass, so slot-like
/// text inside the inserted values is left alone.
pub fn fill_template(template: &str, summary: &str, source: &str) -> String {
    let mut out = String::with_capacity(template.len() + summary.len() + source.len());
    let mut rest = template;
    while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(t) = tail.strip_prefix("{summary}") {
            out.push_str(summary);
            rest = t;
        } else if let Some(t) = tail.strip_prefix("{source}") {
            out.push_str(source);
            rest = t;
        } else {
            out.push('{');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct DaPrompts {
    pub version: u32,
    pub with_context: String,
    pub context_free: String,
}

impl DaPrompts {
    pub fn builtin() -> Self {
        toml::from_str(BUILTIN_DA).expect("bundled DA prompts parse")
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Extracts the first number in an LLM reply.
pub fn parse_rating(reply: &str) -> Result<f64, BackendError> {
    let bytes = reply.as_bytes();
    let start =
        bytes.iter().position(u8::is_ascii_digit).ok_or_else(|| BackendError::Parse { raw: reply.to_string() })?;
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end + 1 < bytes.len() && bytes[end] == b'.' && bytes[end + 1].is_ascii_digit() {
        end += 1;
        while end < bytes.len() && bytes[end].is_ascii_digit() {
            end += 1;
        }
    }
    reply[start..end].parse().map_err(|_| BackendError::Parse { raw: reply.to_string() })
}

fn rate(llm: &dyn TextCompletion, prompt: &str) -> Result<f64, GatewayError> {
    let reply = llm.complete(prompt).map_err(GatewayError::from_backend)?;
    let rating = parse_rating(&reply).map_err(GatewayError::from_backend)?;
    if !(0.0..=100.0).contains(&rating) {
        return Err(GatewayError::Normalization { metric_id: "da".into(), value: rating, low: 0.0, high: 100.0 });
    }
    Ok(rating / 100.0)
}

/// Direct-assessment score of `candidate` against `document`, in `[0, 1]`.
/// No caching or retries; see [`super::Gateway`] for those.
pub fn da_prompt_score(
    llm: &dyn TextCompletion,
    prompts: &DaPrompts,
    document: &str,
    candidate: &str,
) -> Result<f64, GatewayError> {
    if candidate.trim().is_empty() {
        return Err(GatewayError::EmptyCandidate);
    }
    rate(llm, &fill_template(&prompts.with_context, candidate, document))
}

/// Like [`da_prompt_score`] but the prompt never sees the source.
pub fn context_free_score(llm: &dyn TextCompletion, prompts: &DaPrompts, candidate: &str) -> Result<f64, GatewayError> {
    if candidate.trim().is_empty() {
        return Err(GatewayError::EmptyCandidate);
    }
    rate(llm, &fill_template(&prompts.context_free, candidate, ""))
}
