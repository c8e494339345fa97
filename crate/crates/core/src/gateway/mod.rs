//! OpenAI-compatible chat and embeddings client.
//!
//! Requests go to `{base_url}/chat/completions` and `{base_url}/embeddings`
//! with a bearer token read from `CC_API_KEY`. Transport errors, `429` and
//! `5xx` answers are retried with exponential backoff; at most
//! `max_parallel` requests are in flight per [`Gateway`].

mod embed;
mod extract;

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::par::Semaphore;

pub use embed::{CachedEmbedder, EmbeddingVector, HashedBowEmbedder, HASHED_BOW_DIM};
pub use extract::{extract_content, has_main_def, ExtractionError};
pub(crate) use extract::without_fences;

/// Environment variable holding the API key.
pub const API_KEY_ENV: &str = "CC_API_KEY";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("gateway configuration error: {0}")]
    Config(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP status {status} after {attempts} attempt(s): {body}")]
    Status { status: u16, attempts: u32, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Exponential backoff: `base * 2^attempt`, capped at `max_delay`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.min(31)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    /// Every delay the policy may sleep, in order.
    pub fn schedule(&self) -> Vec<Duration> {
        (0..self.max_retries).map(|r| self.delay(r)).collect()
    }
}

fn secs<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

fn de_secs<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
    let v = f64::deserialize(d)?;
    Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub base_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub max_retries: u32,
    #[serde(serialize_with = "secs", deserialize_with = "de_secs")]
    pub request_timeout: Duration,
    pub max_parallel: usize,
    #[serde(serialize_with = "secs", deserialize_with = "de_secs")]
    pub retry_base_delay: Duration,
    #[serde(serialize_with = "secs", deserialize_with = "de_secs")]
    pub retry_max_delay: Duration,
    /// Never written to run snapshots.
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl GatewayConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        GatewayConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            temperature: 0.6,
            seed: Some(42),
            max_retries: 3,
            request_timeout: Duration::from_secs(120),
            max_parallel: 8,
            retry_base_delay: Duration::from_millis(500),
            retry_max_delay: Duration::from_secs(30),
            api_key: None,
        }
    }

    pub fn with_env_api_key(mut self) -> Self {
        self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        self
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base_delay: self.retry_base_delay,
            max_delay: self.retry_max_delay,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::Config(format!(
                "temperature must be a finite number >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_parallel < 1 {
            return Err(GatewayError::Config("max_parallel must be at least 1".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(GatewayError::Config(format!(
                "base_url must be an http(s) URL, got {:?}",
                self.base_url
            )));
        }
        if self.model_name.is_empty() {
            return Err(GatewayError::Config("model name is empty".into()));
        }
        Ok(())
    }
}

/// Anything that answers a system + user message pair.
pub trait ChatModel: Send + Sync {
    fn chat(&self, system_text: &str, user_text: &str) -> Result<String, GatewayError>;
}

/// Anything that maps text to an embedding vector.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError>;
}

impl<T: ChatModel + ?Sized> ChatModel for std::sync::Arc<T> {
    fn chat(&self, system_text: &str, user_text: &str) -> Result<String, GatewayError> {
        (**self).chat(system_text, user_text)
    }
}

impl<T: Embedder + ?Sized> Embedder for std::sync::Arc<T> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        (**self).embed(text)
    }
}

enum Attempt {
    Done(Value),
    Retry(GatewayError),
    Fatal(GatewayError),
}

pub struct Gateway {
    config: GatewayConfig,
    agent: ureq::Agent,
    permits: Semaphore,
    embed_dim: Mutex<Option<usize>>,
}

impl Gateway {
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let agent_config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.request_timeout))
            .build();
        Ok(Gateway {
            permits: Semaphore::new(config.max_parallel),
            agent: ureq::Agent::new_with_config(agent_config),
            embed_dim: Mutex::new(None),
            config,
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn attempt(&self, url: &str, body: &Value, attempts: u32) -> Attempt {
        let _permit = self.permits.acquire();
        let mut request = self.agent.post(url);
        if let Some(key) = &self.config.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = match request.send_json(body) {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry(GatewayError::Transport {
                    attempts,
                    message: e.to_string(),
                })
            }
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Retry(GatewayError::Transport {
                    attempts,
                    message: e.to_string(),
                })
            }
        };
        if status == 429 || (500..600).contains(&status) {
            return Attempt::Retry(GatewayError::Status {
                status,
                attempts,
                body: text,
            });
        }
        if !(200..300).contains(&status) {
            return Attempt::Fatal(GatewayError::Status {
                status,
                attempts,
                body: text,
            });
        }
        match serde_json::from_str(&text) {
            Ok(v) => Attempt::Done(v),
            Err(e) => Attempt::Fatal(GatewayError::Protocol(format!("response is not JSON: {e}"))),
        }
    }

    fn post_with_retry(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let url = self.endpoint(path);
        let policy = self.config.retry_policy();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&url, body, attempts) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => {
                    if attempts > policy.max_retries {
                        return Err(e);
                    }
                    log::debug!("retrying {url} after: {e}");
                    std::thread::sleep(policy.delay(attempts - 1));
                }
            }
        }
    }
}

fn chat_request(config: &GatewayConfig, system_text: &str, user_text: &str) -> Value {
    let mut body = json!({
        "model": config.model_name,
        "messages": [
            {"role": "system", "content": system_text},
            {"role": "user", "content": user_text},
        ],
        "temperature": config.temperature,
    });
    if let Some(seed) = config.seed {
        body["seed"] = json!(seed);
    }
    body
}

/// First choice's message text from a chat completion body.
pub fn parse_chat_response(body: &Value) -> Result<String, GatewayError> {
    let choices = body
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| GatewayError::Protocol("response has no `choices` array".into()))?;
    let first = choices
        .first()
        .ok_or_else(|| GatewayError::Protocol("`choices` is empty".into()))?;
    first
        .pointer("/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| GatewayError::Protocol("first choice has no message content".into()))
}

/// First embedding from an embeddings body.
pub fn parse_embedding_response(body: &Value) -> Result<EmbeddingVector, GatewayError> {
    let raw = body
        .pointer("/data/0/embedding")
        .and_then(Value::as_array)
        .ok_or_else(|| GatewayError::Protocol("response has no `data[0].embedding`".into()))?;
    let values = raw
        .iter()
        .map(|v| {
            v.as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| GatewayError::Protocol(format!("non-finite embedding entry {v}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(GatewayError::Protocol("embedding is empty".into()));
    }
    Ok(EmbeddingVector::new(values))
}

impl ChatModel for Gateway {
    fn chat(&self, system_text: &str, user_text: &str) -> Result<String, GatewayError> {
        let body = chat_request(&self.config, system_text, user_text);
        let response = self.post_with_retry("chat/completions", &body)?;
        parse_chat_response(&response)
    }
}

impl Embedder for Gateway {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        if text.is_empty() {
            let dim = self.embed_dim.lock().unwrap_or_else(|e| e.into_inner()).unwrap_or(0);
            return Ok(EmbeddingVector::zero(dim));
        }
        let body = json!({"model": self.config.model_name, "input": text});
        let vector = parse_embedding_response(&self.post_with_retry("embeddings", &body)?)?;
        let mut dim = self.embed_dim.lock().unwrap_or_else(|e| e.into_inner());
        match *dim {
            Some(d) if d != vector.dim() => Err(GatewayError::Protocol(format!(
                "embedding dimension changed from {d} to {}",
                vector.dim()
            ))),
            _ => {
                *dim = Some(vector.dim());
                Ok(vector)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{StubResponse, StubServer};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn fast_config(url: &str) -> GatewayConfig {
        GatewayConfig {
            retry_base_delay: Duration::from_millis(5),
            retry_max_delay: Duration::from_millis(40),
            request_timeout: Duration::from_secs(10),
            ..GatewayConfig::new(url, "test-model")
        }
    }

    #[test]
    fn chat_echoes_user_text() {
        let server = StubServer::start(|req| {
            let body: Value = serde_json::from_slice(&req.body).unwrap();
            let user = body["messages"][1]["content"].as_str().unwrap().to_string();
            StubResponse::chat(&user)
        });
        let gw = Gateway::new(fast_config(&server.base_url())).unwrap();
        assert_eq!(gw.chat("sys", "hello there").unwrap(), "hello there");
        let reqs = server.requests();
        assert_eq!(reqs.len(), 1);
        assert_eq!(reqs[0].path, "/chat/completions");
        let body: Value = serde_json::from_slice(&reqs[0].body).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["temperature"], 0.6);
        assert_eq!(body["seed"], 42);
        assert_eq!(body["messages"][0]["role"], "system");
    }

    #[test]
    fn bearer_token_is_sent() {
        let server = StubServer::start(|_| StubResponse::chat("ok"));
        let mut config = fast_config(&server.base_url());
        config.api_key = Some("sekrit".into());
        Gateway::new(config).unwrap().chat("s", "u").unwrap();
        let reqs = server.requests();
        assert_eq!(reqs[0].header("authorization"), Some("Bearer sekrit"));
    }

    #[test]
    fn retries_429_then_succeeds() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let server = StubServer::start(move |_| {
            if c.fetch_add(1, Ordering::SeqCst) < 2 {
                StubResponse::status(429, "slow down")
            } else {
                StubResponse::chat("fine")
            }
        });
        let gw = Gateway::new(fast_config(&server.base_url())).unwrap();
        assert_eq!(gw.chat("s", "u").unwrap(), "fine");
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn exhausted_retries_carry_last_status() {
        let server = StubServer::start(|_| StubResponse::status(503, "down"));
        let mut config = fast_config(&server.base_url());
        config.max_retries = 2;
        let err = Gateway::new(config).unwrap().chat("s", "u").unwrap_err();
        match err {
            GatewayError::Status { status, attempts, .. } => {
                assert_eq!(status, 503);
                assert_eq!(attempts, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(server.requests().len(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let server = StubServer::start(|_| StubResponse::status(401, "nope"));
        let err = Gateway::new(fast_config(&server.base_url())).unwrap().chat("s", "u").unwrap_err();
        assert!(matches!(err, GatewayError::Status { status: 401, attempts: 1, .. }));
        assert_eq!(server.requests().len(), 1);
    }

    #[test]
    fn missing_choices_is_protocol_error() {
        let server = StubServer::start(|_| StubResponse::json(200, json!({"id": "x"})));
        let err = Gateway::new(fast_config(&server.base_url())).unwrap().chat("s", "u").unwrap_err();
        assert!(matches!(err, GatewayError::Protocol(_)), "{err:?}");
    }

    #[test]
    fn transport_failure_is_retried_then_reported() {
        // nothing listens on this port once the listener is dropped
        let port = {
            let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let mut config = fast_config(&format!("http://127.0.0.1:{port}"));
        config.max_retries = 1;
        let err = Gateway::new(config).unwrap().chat("s", "u").unwrap_err();
        assert!(matches!(err, GatewayError::Transport { attempts: 2, .. }), "{err:?}");
    }

    #[test]
    fn embedding_dimension_is_pinned_per_run() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let server = StubServer::start(move |_| {
            let dim = if c.fetch_add(1, Ordering::SeqCst) == 0 { 3 } else { 4 };
            StubResponse::embedding(&vec![0.5; dim])
        });
        let gw = Gateway::new(fast_config(&server.base_url())).unwrap();
        assert_eq!(gw.embed("a").unwrap().dim(), 3);
        assert!(matches!(gw.embed("b"), Err(GatewayError::Protocol(_))));
        let zero = gw.embed("").unwrap();
        assert_eq!(zero.dim(), 3);
        assert!(zero.is_zero());
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn in_flight_requests_are_bounded() {
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let (l, p) = (live.clone(), peak.clone());
        let server = StubServer::start(move |_| {
            let now = l.fetch_add(1, Ordering::SeqCst) + 1;
            p.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(30));
            l.fetch_sub(1, Ordering::SeqCst);
            StubResponse::chat("ok")
        });
        let mut config = fast_config(&server.base_url());
        config.max_parallel = 2;
        let gw = Arc::new(Gateway::new(config).unwrap());
        let handles: Vec<_> = (0..10)
            .map(|i| {
                let gw = gw.clone();
                std::thread::spawn(move || gw.chat("s", &format!("u{i}")).unwrap())
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), "ok");
        }
        assert!(peak.load(Ordering::SeqCst) <= 2, "peak {}", peak.load(Ordering::SeqCst));
        assert_eq!(server.requests().len(), 10);
    }

    #[test]
    fn config_validation() {
        let mut c = GatewayConfig::new("http://x", "m");
        assert!(c.validate().is_ok());
        c.temperature = -0.1;
        assert!(c.validate().is_err());
        let mut c = GatewayConfig::new("http://x", "m");
        c.max_parallel = 0;
        assert!(c.validate().is_err());
        assert!(GatewayConfig::new("ftp://x", "m").validate().is_err());
    }

    #[test]
    fn retry_schedule_is_monotone_and_bounded() {
        let policy = RetryPolicy {
            max_retries: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_secs(5),
        };
        let schedule = policy.schedule();
        assert_eq!(schedule.len(), 10);
        assert!(schedule.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(schedule[0], Duration::from_millis(100));
        assert_eq!(schedule[3], Duration::from_millis(800));
        assert_eq!(*schedule.last().unwrap(), Duration::from_secs(5));
    }

    #[test]
    fn config_snapshot_omits_api_key() {
        let mut c = GatewayConfig::new("http://x", "m");
        c.api_key = Some("secret".into());
        let text = serde_json::to_string(&c).unwrap();
        assert!(!text.contains("secret"));
        let back: GatewayConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.api_key, None);
        assert_eq!(back.request_timeout, c.request_timeout);
    }
}
