//! Uniform access to factual-consistency metrics.
//!
//! Every backend produces a native score that the gateway maps from its
//! declared range onto `[0, 1]`. Results are cached by content hash, calls
//! are retried on transient failures, and each backend admits a bounded
//! number of in-flight requests in FIFO order.

pub mod cache;
pub mod limit;
pub mod llm;
pub mod prompts;
pub mod remote;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{self, FeatureError};
pub use cache::{CacheKey, ScoreCache};
use limit::FifoSemaphore;
use llm::TextCompletion;
use prompts::{fill_template, parse_rating, DaPrompts};

pub const MOCK_LEXICAL: &str = "mock-lexical";
pub const CHATGPT_DA: &str = "chatgpt-da";
pub const CHATGPT_CONTEXT_FREE: &str = "chatgpt-context-free";
pub const DEFAULT_CONCURRENCY: usize = 4;

/// Failure reported by a single backend call.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited")]
    RateLimited,
    #[error("HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("unparseable reply: {raw:?}")]
    Parse { raw: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("missing credentials (set {0})")]
    MissingCredentials(&'static str),
    #[error("no recorded fixture for request {0}")]
    FixtureMissing(String),
    #[error("{0}")]
    Other(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) | BackendError::RateLimited => true,
            BackendError::Status { code, .. } => *code >= 500,
            _ => false,
        }
    }
}

impl From<FeatureError> for BackendError {
    fn from(e: FeatureError) -> Self {
        BackendError::Other(e.to_string())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("candidate text is empty")]
    EmptyCandidate,
    #[error("metric {0} is not registered")]
    UnknownMetric(String),
    #[error("metric {0} registered twice")]
    DuplicateMetric(String),
    #[error("metric {0} needs network access but the run is offline")]
    OfflineViolation(String),
    #[error("metric {metric_id}: native score {value} outside declared range [{low}, {high}]")]
    Normalization { metric_id: String, value: f64, low: f64, high: f64 },
    #[error("backend unreachable after {attempts} attempts: {message}")]
    Unreachable { attempts: u32, message: String },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("could not parse a rating from reply {raw:?}")]
    Parse { raw: String },
    #[error("backend error: {0}")]
    Backend(BackendError),
    #[error("score cache: {0}")]
    Cache(String),
}

impl GatewayError {
    pub(crate) fn from_backend(e: BackendError) -> Self {
        match e {
            BackendError::Parse { raw } => GatewayError::Parse { raw },
            other => GatewayError::Backend(other),
        }
    }
}

/// Attempts and exponential backoff for retryable backend errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, initial_backoff: Duration::from_secs(1), multiplier: 2.0 }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        Self { max_attempts, initial_backoff: Duration::ZERO, multiplier: 1.0 }
    }

    pub fn run<T>(&self, mut call: impl FnMut() -> Result<T, BackendError>) -> Result<T, GatewayError> {
        let mut backoff = self.initial_backoff;
        let attempts = self.max_attempts.max(1);
        for attempt in 1..=attempts {
            match call() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < attempts => {
                    log::warn!("attempt {attempt}/{attempts} failed: {e}; retrying in {backoff:?}");
                    std::thread::sleep(backoff);
                    backoff = backoff.mul_f64(self.multiplier);
                }
                Err(BackendError::RateLimited) => return Err(GatewayError::RateLimited { attempts }),
                Err(e) if e.is_retryable() => {
                    return Err(GatewayError::Unreachable { attempts, message: e.to_string() })
                }
                Err(e) => return Err(GatewayError::from_backend(e)),
            }
        }
        unreachable!("retry loop returns on the last attempt")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    LlmPrompt,
    Builtin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBackend {
    pub metric_id: String,
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    /// Declared native range, mapped linearly onto `[0, 1]`.
    pub native_range: (f64, f64),
}

impl MetricBackend {
    pub fn builtin(metric_id: impl Into<String>) -> Self {
        Self { metric_id: metric_id.into(), kind: BackendKind::Builtin, endpoint: None, native_range: (0.0, 1.0) }
    }

    pub fn remote(metric_id: impl Into<String>, endpoint: impl Into<String>) -> Self {
        Self {
            metric_id: metric_id.into(),
            kind: BackendKind::Remote,
            endpoint: Some(endpoint.into()),
            native_range: (0.0, 1.0),
        }
    }

    /// LLM direct assessment on a 0–100 scale.
    pub fn llm_prompt(metric_id: impl Into<String>) -> Self {
        Self { metric_id: metric_id.into(), kind: BackendKind::LlmPrompt, endpoint: None, native_range: (0.0, 100.0) }
    }

    pub fn normalize(&self, native: f64) -> Result<f64, GatewayError> {
        let (low, high) = self.native_range;
        if !native.is_finite() || native < low || native > high {
            return Err(GatewayError::Normalization { metric_id: self.metric_id.clone(), value: native, low, high });
        }
        Ok(((native - low) / (high - low)).clamp(0.0, 1.0))
    }
}

/// A normalized score for one (document, variant) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub metric_id: String,
    pub doc_id: String,
    pub variant_id: String,
    pub score: f64,
    /// Whether the score came from the cache. Not serialized, so persisted
    /// score sets do not depend on cache state.
    #[serde(default, skip_serializing)]
    pub cached: bool,
}

/// Produces a score on the backend's native scale.
pub trait Scorer: Send + Sync {
    fn native_score(&self, document: &str, candidate: &str) -> Result<f64, BackendError>;

    fn requires_network(&self) -> bool {
        false
    }
}

/// Wraps a closure as an in-process scorer.
pub struct FnScorer<F>(pub F);

impl<F> Scorer for FnScorer<F>
where
    F: Fn(&str, &str) -> Result<f64, BackendError> + Send + Sync,
{
    fn native_score(&self, document: &str, candidate: &str) -> Result<f64, BackendError> {
        (self.0)(document, candidate)
    }
}

/// Offline reference metric over shallow features:
/// `0.5·rouge2 + 0.3·(1 − word_novelty) + 0.2·min(1, conciseness / 10)`,
/// clamped to `[0, 1]`.
pub fn mock_lexical(document: &str, candidate: &str) -> Result<f64, FeatureError> {
    let rouge = features::rouge2_f1(candidate, document);
    let novelty = features::word_novelty(candidate, document)?;
    let ratio = features::conciseness(candidate, document)?;
    Ok((0.5 * rouge + 0.3 * (1.0 - novelty) + 0.2 * (ratio / 10.0).min(1.0)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockLexical;

impl Scorer for MockLexical {
    fn native_score(&self, document: &str, candidate: &str) -> Result<f64, BackendError> {
        Ok(mock_lexical(document, candidate)?)
    }
}

/// Direct-assessment scorer: prompt with (or without) the source and parse
/// a 0–100 rating.
pub struct DaScorer {
    llm: Arc<dyn TextCompletion>,
    template: String,
}

impl DaScorer {
    pub fn with_context(llm: Arc<dyn TextCompletion>, prompts: &DaPrompts) -> Self {
        Self { llm, template: prompts.with_context.clone() }
    }

    pub fn context_free(llm: Arc<dyn TextCompletion>, prompts: &DaPrompts) -> Self {
        Self { llm, template: prompts.context_free.clone() }
    }
}

impl Scorer for DaScorer {
    fn native_score(&self, document: &str, candidate: &str) -> Result<f64, BackendError> {
        let reply = self.llm.complete(&fill_template(&self.template, candidate, document))?;
        parse_rating(&reply)
    }

    fn requires_network(&self) -> bool {
        self.llm.requires_network()
    }
}

struct Entry {
    backend: MetricBackend,
    scorer: Arc<dyn Scorer>,
    limiter: FifoSemaphore,
    concurrency: usize,
}

/// Immutable set of metric backends.
pub struct Registry {
    entries: BTreeMap<String, Entry>,
}

pub struct RegistryBuilder {
    offline: bool,
    entries: BTreeMap<String, Entry>,
    error: Option<GatewayError>,
}

impl Registry {
    pub fn builder(offline: bool) -> RegistryBuilder {
        RegistryBuilder { offline, entries: BTreeMap::new(), error: None }
    }

    pub fn backend(&self, metric_id: &str) -> Option<&MetricBackend> {
        self.entries.get(metric_id).map(|e| &e.backend)
    }

    pub fn metric_ids(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn contains(&self, metric_id: &str) -> bool {
        self.entries.contains_key(metric_id)
    }
}

impl RegistryBuilder {
    pub fn register(self, backend: MetricBackend, scorer: Arc<dyn Scorer>) -> Self {
        self.register_with_concurrency(backend, scorer, DEFAULT_CONCURRENCY)
    }

    pub fn register_with_concurrency(
        mut self,
        backend: MetricBackend,
        scorer: Arc<dyn Scorer>,
        concurrency: usize,
    ) -> Self {
        if self.error.is_some() {
            return self;
        }
        let id = backend.metric_id.clone();
        if self.offline && (backend.kind == BackendKind::Remote || scorer.requires_network()) {
            self.error = Some(GatewayError::OfflineViolation(id));
            return self;
        }
        if self.entries.contains_key(&id) {
            self.error = Some(GatewayError::DuplicateMetric(id));
            return self;
        }
        let concurrency = concurrency.max(1);
        self.entries.insert(id, Entry { backend, scorer, limiter: FifoSemaphore::new(concurrency), concurrency });
        self
    }

    pub fn mock_lexical(self) -> Self {
        self.register(MetricBackend::builtin(MOCK_LEXICAL), Arc::new(MockLexical))
    }

    pub fn build(self) -> Result<Registry, GatewayError> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(Registry { entries: self.entries }),
        }
    }
}

/// Identifies the pair being scored and carries its texts.
#[derive(Debug, Clone, Copy)]
pub struct ScoreRequest<'a> {
    pub doc_id: &'a str,
    pub variant_id: &'a str,
    pub document: &'a str,
    pub candidate: &'a str,
}

pub struct Gateway {
    registry: Registry,
    cache: ScoreCache,
    retry: RetryPolicy,
}

impl Gateway {
    pub fn new(registry: Registry, cache: ScoreCache) -> Self {
        Self { registry, cache, retry: RetryPolicy::default() }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn cache(&self) -> &ScoreCache {
        &self.cache
    }

    pub fn score(&self, metric_id: &str, req: &ScoreRequest<'_>) -> Result<MetricScore, GatewayError> {
        if req.candidate.trim().is_empty() {
            return Err(GatewayError::EmptyCandidate);
        }
        let entry =
            self.registry.entries.get(metric_id).ok_or_else(|| GatewayError::UnknownMetric(metric_id.to_string()))?;
        let make = |score, cached| MetricScore {
            metric_id: metric_id.to_string(),
            doc_id: req.doc_id.to_string(),
            variant_id: req.variant_id.to_string(),
            score,
            cached,
        };
        let key = CacheKey::new(metric_id, req.document, req.candidate);
        if let Some(score) = self.cache.get(&key) {
            return Ok(make(score, true));
        }
        let native = {
            let _permit = entry.limiter.acquire();
            self.retry.run(|| entry.scorer.native_score(req.document, req.candidate))?
        };
        let score = entry.backend.normalize(native)?;
        let (stored, inserted) = self.cache.insert(key, score).map_err(|e| GatewayError::Cache(e.to_string()))?;
        Ok(make(stored, !inserted))
    }

    /// Scores many pairs with up to the backend's concurrency limit in
    /// flight. Results keep the order of `reqs`.
    pub fn score_batch(&self, metric_id: &str, reqs: &[ScoreRequest<'_>]) -> Vec<Result<MetricScore, GatewayError>> {
        let workers = match self.registry.entries.get(metric_id) {
            Some(e) => e.concurrency.min(reqs.len()).max(1),
            None => return reqs.iter().map(|_| Err(GatewayError::UnknownMetric(metric_id.to_string()))).collect(),
        };
        if workers == 1 {
            return reqs.iter().map(|r| self.score(metric_id, r)).collect();
        }
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<MetricScore, GatewayError>>>> = Mutex::new(vec![None; reqs.len()]);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= reqs.len() {
                        break;
                    }
                    let r = self.score(metric_id, &reqs[i]);
                    results.lock().expect("results lock")[i] = Some(r);
                });
            }
        });
        results.into_inner().expect("results lock").into_iter().map(|r| r.expect("every request scored")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req<'a>(document: &'a str, candidate: &'a str) -> ScoreRequest<'a> {
        ScoreRequest { doc_id: "d", variant_id: "v", document, candidate }
    }

    fn gateway(builder: RegistryBuilder) -> Gateway {
        Gateway::new(builder.build().unwrap(), ScoreCache::in_memory()).with_retry(RetryPolicy::immediate(3))
    }

    #[test]
    fn mock_lexical_examples() {
        let doc = "The council approved the budget on Monday. Critics objected strongly.";
        assert!((mock_lexical(doc, doc).unwrap() - 0.82).abs() < 1e-12);

        let long_doc = (0..1000).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        assert!((mock_lexical(&long_doc, "zebra").unwrap() - 0.2).abs() < 1e-12);
        assert!(mock_lexical(doc, "  ").is_err());
    }

    #[test]
    fn gateway_scores_and_caches() {
        let gw = gateway(Registry::builder(true).mock_lexical());
        let text = "Alpha beta gamma. Delta epsilon.";
        let first = gw.score(MOCK_LEXICAL, &req(text, text)).unwrap();
        assert!(!first.cached);
        let second = gw.score(MOCK_LEXICAL, &req(text, text)).unwrap();
        assert!(second.cached);
        assert_eq!(first.score, second.score);
        assert_eq!(gw.cache().len(), 1);
    }

    #[test]
    fn rejects_empty_candidate_and_unknown_metric() {
        let gw = gateway(Registry::builder(true).mock_lexical());
        assert_eq!(gw.score(MOCK_LEXICAL, &req("doc", " ")), Err(GatewayError::EmptyCandidate));
        assert_eq!(gw.score("nope", &req("doc", "x")), Err(GatewayError::UnknownMetric("nope".into())));
    }

    #[test]
    fn out_of_range_native_score_is_an_error() {
        let gw =
            gateway(Registry::builder(false).register(
                MetricBackend::remote("fake", "http://unused"),
                Arc::new(FnScorer(|_: &str, _: &str| Ok(1.7))),
            ));
        assert!(
            matches!(gw.score("fake", &req("d", "c")), Err(GatewayError::Normalization { value, .. }) if value == 1.7)
        );
        assert!(gw.cache().is_empty());
    }

    #[test]
    fn normalization_endpoints_are_exact() {
        let b = MetricBackend { native_range: (-3.0, 7.0), ..MetricBackend::builtin("x") };
        assert_eq!(b.normalize(-3.0).unwrap(), 0.0);
        assert_eq!(b.normalize(7.0).unwrap(), 1.0);
        assert!(b.normalize(f64::NAN).is_err());
        let da = MetricBackend::llm_prompt(CHATGPT_DA);
        assert_eq!(da.normalize(83.0).unwrap(), 0.83);
        assert_eq!(da.normalize(100.0).unwrap(), 1.0);
    }

    #[test]
    fn retries_transient_failures() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let flaky = FnScorer(move |_: &str, _: &str| {
            if c.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(BackendError::Transport("connection refused".into()))
            } else {
                Ok(0.4)
            }
        });
        let gw = gateway(Registry::builder(true).register(MetricBackend::builtin("flaky"), Arc::new(flaky)));
        assert_eq!(gw.score("flaky", &req("d", "c")).unwrap().score, 0.4);
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_bounded_retries() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let down = FnScorer(move |_: &str, _: &str| {
            c.fetch_add(1, Ordering::SeqCst);
            Err(BackendError::Transport("down".into()))
        });
        let gw = gateway(Registry::builder(true).register(MetricBackend::builtin("down"), Arc::new(down)));
        assert!(matches!(gw.score("down", &req("d", "c")), Err(GatewayError::Unreachable { attempts: 3, .. })));
        assert_eq!(calls.load(Ordering::SeqCst), 3);

        let limited = FnScorer(|_: &str, _: &str| Err(BackendError::RateLimited));
        let gw = gateway(Registry::builder(true).register(MetricBackend::builtin("rl"), Arc::new(limited)));
        assert_eq!(gw.score("rl", &req("d", "c")), Err(GatewayError::RateLimited { attempts: 3 }));
    }

    #[test]
    fn non_retryable_errors_fail_fast() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let bad = FnScorer(move |_: &str, _: &str| {
            c.fetch_add(1, Ordering::SeqCst);
            Err(BackendError::Status { code: 404, body: "unknown metric".into() })
        });
        let gw = gateway(Registry::builder(true).register(MetricBackend::builtin("bad"), Arc::new(bad)));
        assert!(matches!(
            gw.score("bad", &req("d", "c")),
            Err(GatewayError::Backend(BackendError::Status { code: 404, .. }))
        ));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn offline_registry_rejects_network_backends() {
        let r = Registry::builder(true)
            .register(MetricBackend::remote("summac", "http://localhost:1"), Arc::new(MockLexical))
            .build();
        assert!(matches!(r, Err(GatewayError::OfflineViolation(id)) if id == "summac"));

        struct Net;
        impl TextCompletion for Net {
            fn complete(&self, _: &str) -> Result<String, BackendError> {
                Ok("1".into())
            }
        }
        let scorer = DaScorer::with_context(Arc::new(Net), &DaPrompts::builtin());
        let r = Registry::builder(true).register(MetricBackend::llm_prompt(CHATGPT_DA), Arc::new(scorer)).build();
        assert!(matches!(r, Err(GatewayError::OfflineViolation(_))));

        let fixture = Arc::new(llm::FixtureLlm::default());
        let scorer = DaScorer::with_context(fixture, &DaPrompts::builtin());
        assert!(Registry::builder(true)
            .register(MetricBackend::llm_prompt(CHATGPT_DA), Arc::new(scorer))
            .build()
            .is_ok());
    }

    #[test]
    fn duplicate_metric_rejected() {
        let r = Registry::builder(true).mock_lexical().mock_lexical().build();
        assert!(matches!(r, Err(GatewayError::DuplicateMetric(_))));
    }

    #[test]
    fn batch_preserves_order_and_respects_limit() {
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let (a, p) = (active.clone(), peak.clone());
        let slow = FnScorer(move |_: &str, c: &str| {
            let now = a.fetch_add(1, Ordering::SeqCst) + 1;
            p.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(3));
            a.fetch_sub(1, Ordering::SeqCst);
            Ok(c.len() as f64 / 100.0)
        });
        let gw = gateway(Registry::builder(true).register_with_concurrency(
            MetricBackend::builtin("slow"),
            Arc::new(slow),
            2,
        ));
        let cands: Vec<String> = (1..=20).map(|i| "x".repeat(i)).collect();
        let reqs: Vec<ScoreRequest> = cands.iter().map(|c| req("d", c)).collect();
        let out = gw.score_batch("slow", &reqs);
        for (i, r) in out.iter().enumerate() {
            assert!((r.as_ref().unwrap().score - (i + 1) as f64 / 100.0).abs() < 1e-12);
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn da_scorer_through_gateway_normalizes_by_100() {
        let llm: Arc<dyn TextCompletion> = Arc::new(|_: &str| Ok("83".to_string()));
        let gw = gateway(Registry::builder(true).register(
            MetricBackend::llm_prompt(CHATGPT_DA),
            Arc::new(DaScorer::with_context(llm, &DaPrompts::builtin())),
        ));
        assert_eq!(gw.score(CHATGPT_DA, &req("doc", "sum")).unwrap().score, 0.83);

        let llm: Arc<dyn TextCompletion> = Arc::new(|_: &str| Ok("no idea".to_string()));
        let gw = gateway(Registry::builder(true).register(
            MetricBackend::llm_prompt(CHATGPT_DA),
            Arc::new(DaScorer::with_context(llm, &DaPrompts::builtin())),
        ));
        assert!(
            matches!(gw.score(CHATGPT_DA, &req("doc", "sum")), Err(GatewayError::Parse { raw }) if raw == "no idea")
        );
    }
}
