use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendError, CompletionRequest, FinishReason, ModelRef, RawCompletion, Transport};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "GENREAD_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub completions_path: String,
    pub embeddings_path: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            completions_path: "/v1/completions".into(),
            embeddings_path: "/v1/embeddings".into(),
            api_key: None,
            timeout: Duration::from_secs(120),
        }
    }
}

impl HttpConfig {
    pub fn from_env() -> Self {
        Self {
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            ..Self::default()
        }
    }
}

/// Blocking client for completion-API-compatible endpoints.
pub struct HttpTransport {
    agent: ureq::Agent,
    config: HttpConfig,
}

impl std::fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpTransport")
            .field("completions_path", &self.config.completions_path)
            .field("embeddings_path", &self.config.embeddings_path)
            .field("api_key", &self.config.api_key.as_ref().map(|_| "<set>"))
            .finish()
    }
}

impl HttpTransport {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self { agent, config }
    }

    fn url(model: &ModelRef, path: &str) -> Result<String, BackendError> {
        let base = model.endpoint_url.as_deref().ok_or_else(|| {
            BackendError::InvalidRequest("http backend requires endpoint_url".into())
        })?;
        Ok(format!(
            "{}/{}",
            base.trim_end_matches('/'),
            path.trim_start_matches('/')
        ))
    }

    fn post(&self, url: &str, body: &Value) -> Result<Value, BackendError> {
        let mut req = self
            .agent
            .post(url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body.to_string())
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| BackendError::MalformedResponse(format!("invalid JSON: {e}"))),
            429 => Err(BackendError::RateLimited { retry_after }),
            408 | 500..=599 => Err(BackendError::Transport(format!("HTTP {status}: {text}"))),
            _ => Err(BackendError::Rejected { status, body: text }),
        }
    }
}

pub(crate) fn parse_completion(v: &Value) -> Result<RawCompletion, BackendError> {
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::MalformedResponse("missing choices[0]".into()))?;
    let text = choice
        .get("text")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::MalformedResponse("missing choices[0].text".into()))?;
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("length") => FinishReason::Length,
        Some("stop") | None => FinishReason::Stop,
        Some(_) => FinishReason::Error,
    };
    Ok(RawCompletion {
        text: text.to_string(),
        finish_reason,
    })
}

pub(crate) fn parse_embedding(v: &Value) -> Result<Vec<f64>, BackendError> {
    let arr = v
        .get("data")
        .and_then(|d| d.get(0))
        .and_then(|d| d.get("embedding"))
        .and_then(Value::as_array)
        .ok_or_else(|| BackendError::MalformedResponse("missing data[0].embedding".into()))?;
    arr.iter()
        .map(|x| {
            x.as_f64().filter(|f| f.is_finite()).ok_or_else(|| {
                BackendError::MalformedResponse(format!("non-numeric embedding entry {x}"))
            })
        })
        .collect()
}

impl Transport for HttpTransport {
    fn complete(&self, req: &CompletionRequest) -> Result<RawCompletion, BackendError> {
        let url = Self::url(&req.model, &self.config.completions_path)?;
        let body = json!({
            "model": req.model.model_name,
            "prompt": req.prompt,
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
            "top_p": req.top_p,
        });
        parse_completion(&self.post(&url, &body)?)
    }

    fn embed(&self, text: &str, model: &ModelRef) -> Result<Vec<f64>, BackendError> {
        let url = Self::url(model, &self.config.embeddings_path)?;
        let body = json!({ "model": model.model_name, "input": text });
        parse_embedding(&self.post(&url, &body)?)
    }
}
