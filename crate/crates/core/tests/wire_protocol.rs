//! The remote client against an in-process HTTP server speaking the scorer
//! wire protocol.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};

use factlens::features::{extract_features, CapitalizedSpanExtractor, FeatureError, SentenceEmbedder};
use factlens::gateway::remote::{health, RemoteEmbedder, RemoteScorer};
use factlens::gateway::{
    BackendError, Gateway, GatewayError, MetricBackend, Registry, RetryPolicy, ScoreCache, ScoreRequest,
};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Seen {
    method: String,
    path: String,
    body: Value,
}

type Handler = dyn Fn(usize, &str, &Value) -> (u16, String) + Send + Sync;

/// Serves one request per connection; `handler` gets the request index.
struct MockServer {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

impl MockServer {
    fn start(handler: impl Fn(usize, &str, &Value) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        let handler: Arc<Handler> = Arc::new(handler);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { return };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let mut parts = line.split_whitespace();
                let method = parts.next().unwrap_or_default().to_string();
                let path = parts.next().unwrap_or_default().to_string();
                let mut len = 0;
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    if h.trim().is_empty() {
                        break;
                    }
                    if let Some((k, v)) = h.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            len = v.trim().parse().unwrap();
                        }
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let body: Value = if len == 0 { Value::Null } else { serde_json::from_slice(&body).unwrap() };
                let index = {
                    let mut l = log.lock().unwrap();
                    l.push(Seen { method, path: path.clone(), body: body.clone() });
                    l.len() - 1
                };
                let (status, reply) = handler(index, &path, &body);
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                    reply.len()
                );
            }
        });
        Self { url, seen }
    }

    fn seen(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }
}

fn gateway_for(url: &str, metric: &str) -> Gateway {
    let registry = Registry::builder(false)
        .register(MetricBackend::remote(metric, url), Arc::new(RemoteScorer::new(url, metric)))
        .build()
        .unwrap();
    Gateway::new(registry, ScoreCache::in_memory()).with_retry(RetryPolicy::immediate(3))
}

fn request<'a>(document: &'a str, candidate: &'a str) -> ScoreRequest<'a> {
    ScoreRequest { doc_id: "d1", variant_id: "s1", document, candidate }
}

#[test]
fn score_request_body_and_cached_replay() {
    let server = MockServer::start(|_, _, _| (200, r#"{"score": 0.75}"#.into()));
    let gw = gateway_for(&server.url, "summac");
    let s = gw.score("summac", &request("The doc.", "The summary.")).unwrap();
    assert_eq!(s.score, 0.75);
    assert!(!s.cached);
    let again = gw.score("summac", &request("The doc.", "The summary.")).unwrap();
    assert_eq!(again.score, 0.75);
    assert!(again.cached);

    let seen = server.seen();
    assert_eq!(seen.len(), 1, "second call must hit the cache");
    assert_eq!(seen[0].method, "POST");
    assert_eq!(seen[0].path, "/score");
    assert_eq!(seen[0].body, json!({"metric": "summac", "document": "The doc.", "candidate": "The summary."}));
}

#[test]
fn out_of_range_score_is_a_normalization_error() {
    let server = MockServer::start(|_, _, _| (200, r#"{"score": 1.7}"#.into()));
    let err = gateway_for(&server.url, "summac").score("summac", &request("d", "c")).unwrap_err();
    assert!(matches!(err, GatewayError::Normalization { value, .. } if value == 1.7), "{err}");
}

#[test]
fn rate_limiting_is_retried_then_reported() {
    let server = MockServer::start(|_, _, _| (429, "{}".into()));
    let err = gateway_for(&server.url, "m").score("m", &request("d", "c")).unwrap_err();
    assert!(matches!(err, GatewayError::RateLimited { attempts: 3 }), "{err}");
    assert_eq!(server.seen().len(), 3);
}

#[test]
fn server_errors_are_retried_until_success() {
    let server = MockServer::start(|i, _, _| match i {
        0 | 1 => (500, r#"{"error": "warming up"}"#.into()),
        _ => (200, r#"{"score": 0.25}"#.into()),
    });
    let s = gateway_for(&server.url, "m").score("m", &request("d", "c")).unwrap();
    assert_eq!(s.score, 0.25);
    assert_eq!(server.seen().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(|_, _, _| (404, r#"{"error": "unknown metric"}"#.into()));
    let err = gateway_for(&server.url, "m").score("m", &request("d", "c")).unwrap_err();
    match err {
        GatewayError::Backend(BackendError::Status { code, body }) => {
            assert_eq!(code, 404);
            assert!(body.contains("unknown metric"));
        }
        other => panic!("unexpected {other}"),
    }
    assert_eq!(server.seen().len(), 1);
}

#[test]
fn malformed_reply_is_a_protocol_error() {
    let server = MockServer::start(|_, _, _| (200, r#"{"value": 0.5}"#.into()));
    let err = gateway_for(&server.url, "m").score("m", &request("d", "c")).unwrap_err();
    assert!(matches!(err, GatewayError::Backend(BackendError::Protocol(_))), "{err}");
}

#[test]
fn unreachable_endpoint_fails_after_bounded_retries() {
    // Bind then drop to get a port with nothing listening.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}");
    let err = gateway_for(&url, "m").score("m", &request("d", "c")).unwrap_err();
    assert!(matches!(err, GatewayError::Unreachable { attempts: 3, .. }), "{err}");
}

#[test]
fn remote_backends_are_refused_offline() {
    let err = Registry::builder(true)
        .register(
            MetricBackend::remote("m", "http://127.0.0.1:9"),
            Arc::new(RemoteScorer::new("http://127.0.0.1:9", "m")),
        )
        .build()
        .err()
        .expect("offline registry refuses remote");
    assert!(matches!(err, GatewayError::OfflineViolation(m) if m == "m"));
}

#[test]
fn health_lists_metrics() {
    let server = MockServer::start(|_, _, _| (200, r#"{"status": "ok", "metrics": ["summac", "alignscore"]}"#.into()));
    let h = health(&server.url).unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.metrics, vec!["summac", "alignscore"]);
    assert_eq!(server.seen()[0].method, "GET");
    assert_eq!(server.seen()[0].path, "/health");
}

#[test]
fn embeddings_feed_semantic_similarity() {
    // Every sentence gets the same unit vector, so similarity is exactly 1.
    let server = MockServer::start(|_, _, body| {
        let n = body["texts"].as_array().map_or(0, Vec::len);
        (200, json!({ "vectors": vec![vec![0.6, 0.8]; n] }).to_string())
    });
    let embedder = RemoteEmbedder::new(&server.url);
    let v = embedder.embed(&["One.".to_string(), "Two.".to_string()]).unwrap();
    assert_eq!(v, vec![vec![0.6, 0.8]; 2]);
    assert_eq!(server.seen()[0].path, "/embed");
    assert_eq!(server.seen()[0].body, json!({"texts": ["One.", "Two."]}));

    let fv = extract_features("A cat sat.", "A dog ran. A cat sat.", &embedder, &CapitalizedSpanExtractor::default())
        .unwrap();
    assert!((fv.semantic_sim - 1.0).abs() < 1e-12);
}

#[test]
fn embedding_failures_surface_as_feature_errors() {
    let server = MockServer::start(|_, _, _| (503, "{}".into()));
    let err = RemoteEmbedder::new(&server.url).embed(&["x".to_string()]).unwrap_err();
    assert!(matches!(err, FeatureError::Embedding(_)), "{err}");
}
