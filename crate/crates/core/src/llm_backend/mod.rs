//! Text completion and embedding against a completion-API endpoint or the
//! offline mock, fronted by a content-addressed response cache.

mod cache;
mod client;
mod http;
mod mock;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CacheEntry, CacheHeader, ResponseCache};
pub use client::{ClientStats, LlmClient, RetryPolicy, DEFAULT_PARALLELISM};
pub use http::{HttpConfig, HttpTransport, API_KEY_ENV};
pub use mock::{MockTransport, MOCK_EMBEDDING_DIMS, MOCK_GREEDY_WORDS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cache I/O error: {0}")]
    Cache(String),
}

impl BackendError {
    /// Only transport failures and rate limiting are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Transport(_) | BackendError::RateLimited { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    #[default]
    Mock,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Http => "http",
            BackendKind::Mock => "mock",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Opaque reference to a hosted (or mocked) model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelRef {
    pub backend: BackendKind,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
}

impl ModelRef {
    pub fn mock(model_name: impl Into<String>) -> Self {
        Self {
            backend: BackendKind::Mock,
            model_name: model_name.into(),
            endpoint_url: None,
        }
    }

    pub fn http(model_name: impl Into<String>, endpoint_url: impl Into<String>) -> Self {
        Self {
            backend: BackendKind::Http,
            model_name: model_name.into(),
            endpoint_url: Some(endpoint_url.into()),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match (self.backend, &self.endpoint_url) {
            (BackendKind::Http, None) => Err(BackendError::InvalidRequest(
                "http backend requires endpoint_url".into(),
            )),
            (BackendKind::Mock, Some(_)) => Err(BackendError::InvalidRequest(
                "mock backend takes no endpoint_url".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: ModelRef,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    /// Salts the cache key so repeated samples of one prompt stay distinct.
    pub seed_tag: String,
}

impl CompletionRequest {
    /// Greedy decoding: temperature 0, top_p 1.
    pub fn greedy(model: ModelRef, prompt: impl Into<String>, max_tokens: u32) -> Self {
        Self {
            model,
            prompt: prompt.into(),
            max_tokens,
            temperature: 0.0,
            top_p: 1.0,
            seed_tag: String::new(),
        }
    }

    pub fn sampled(
        model: ModelRef,
        prompt: impl Into<String>,
        max_tokens: u32,
        temperature: f64,
        top_p: f64,
        seed_tag: impl Into<String>,
    ) -> Self {
        Self {
            model,
            prompt: prompt.into(),
            max_tokens,
            temperature,
            top_p,
            seed_tag: seed_tag.into(),
        }
    }

    pub fn is_greedy(&self) -> bool {
        self.temperature == 0.0
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        self.model.validate()?;
        if self.prompt.is_empty() {
            return Err(BackendError::InvalidRequest(
                "prompt must not be empty".into(),
            ));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::InvalidRequest(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.is_greedy() && self.top_p != 1.0 {
            return Err(BackendError::InvalidRequest(
                "greedy decoding (temperature 0) requires top_p = 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionResult {
    pub text: String,
    pub finish_reason: FinishReason,
    pub cached: bool,
}

/// What a transport hands back before caching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCompletion {
    pub text: String,
    pub finish_reason: FinishReason,
}

/// A wire-level backend. Implementations are called at most once per cache
/// miss (per retry attempt) by [`LlmClient`].
pub trait Transport: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<RawCompletion, BackendError>;

    fn embed(&self, text: &str, model: &ModelRef) -> Result<Vec<f64>, BackendError>;

    /// Embedding width, when the backend declares one up front.
    fn embedding_dims(&self) -> Option<usize> {
        None
    }
}

/// 64 lowercase hex characters addressing one cached response.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn from_material(material: &str) -> Self {
        Self(hex::encode(Sha256::digest(material.as_bytes())))
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Canonical serialization hashed into a completion cache key. Keys are
/// emitted in sorted order; `endpoint_url` is deliberately absent.
pub fn completion_key_material(req: &CompletionRequest) -> String {
    let mut m = serde_json::Map::new();
    m.insert("backend".into(), req.model.backend.as_str().into());
    m.insert("kind".into(), "completion".into());
    m.insert("max_tokens".into(), req.max_tokens.into());
    m.insert("model_name".into(), req.model.model_name.clone().into());
    m.insert("seed_tag".into(), req.seed_tag.clone().into());
    m.insert("temperature".into(), req.temperature.into());
    m.insert("text".into(), req.prompt.clone().into());
    m.insert("top_p".into(), req.top_p.into());
    serde_json::Value::Object(m).to_string()
}

/// Canonical serialization for an embedding input; decoding fields are
/// pinned to explicit nulls.
pub fn embedding_key_material(model: &ModelRef, text: &str) -> String {
    let mut m = serde_json::Map::new();
    m.insert("backend".into(), model.backend.as_str().into());
    m.insert("kind".into(), "embedding".into());
    m.insert("max_tokens".into(), serde_json::Value::Null);
    m.insert("model_name".into(), model.model_name.clone().into());
    m.insert("seed_tag".into(), "".into());
    m.insert("temperature".into(), serde_json::Value::Null);
    m.insert("text".into(), text.into());
    m.insert("top_p".into(), serde_json::Value::Null);
    serde_json::Value::Object(m).to_string()
}

pub fn completion_cache_key(req: &CompletionRequest) -> CacheKey {
    CacheKey::from_material(&completion_key_material(req))
}

pub fn embedding_cache_key(model: &ModelRef, text: &str) -> CacheKey {
    CacheKey::from_material(&embedding_key_material(model, text))
}
