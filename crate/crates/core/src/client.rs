//! Blocking client for OpenAI-compatible chat-completion endpoints.
//!
//! Requests are never streamed: latency is end-to-end, from dispatch to the
//! last byte of the body, so it fits inside one measurement window.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use url::Url;

use crate::prompt::ChatPrompt;

pub const MAX_ATTEMPTS: u32 = 3;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 128;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
const BACKOFF_BASE: Duration = Duration::from_millis(250);

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("endpoint unreachable after {attempts} attempt(s): {message}")]
    Unreachable { attempts: u32, message: String },
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("model {wanted:?} is not served (available: {available:?})")]
    ModelNotFound { wanted: String, available: Vec<String> },
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
}

impl ClientError {
    /// Connection-level failures; everything else is final.
    pub fn is_network(&self) -> bool {
        matches!(self, ClientError::Unreachable { .. })
    }
}

#[derive(Clone, Serialize, Deserialize, PartialEq)]
pub struct EndpointConfig {
    pub base_url: Url,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(with = "secs")]
    pub request_timeout: Duration,
    /// Never persisted.
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl std::fmt::Debug for EndpointConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EndpointConfig")
            .field("base_url", &self.base_url.as_str())
            .field("model_name", &self.model_name)
            .field("temperature", &self.temperature)
            .field("max_output_tokens", &self.max_output_tokens)
            .field("request_timeout", &self.request_timeout)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

impl EndpointConfig {
    pub fn new(base_url: &str, model_name: impl Into<String>) -> Result<Self, ClientError> {
        let cfg = EndpointConfig {
            base_url: Url::parse(base_url).map_err(|e| ClientError::Config(format!("{base_url:?}: {e}")))?,
            model_name: model_name.into(),
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            request_timeout: DEFAULT_TIMEOUT,
            api_key: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.base_url.cannot_be_a_base() || !matches!(self.base_url.scheme(), "http" | "https") {
            return Err(ClientError::Config(format!("{} is not an absolute http(s) URL", self.base_url)));
        }
        if self.max_output_tokens == 0 {
            return Err(ClientError::Config("max_output_tokens must be at least 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ClientError::Config(format!("temperature {} must be >= 0", self.temperature)));
        }
        if self.model_name.is_empty() {
            return Err(ClientError::Config("model name is empty".into()));
        }
        Ok(())
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/v1/{path}", self.base_url.as_str().trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    /// Seconds from dispatch of the successful attempt to full receipt.
    pub latency: f64,
    /// 1 unless network failures forced retries.
    pub attempts: u32,
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

#[derive(Deserialize)]
struct ModelList {
    data: Vec<serde_json::Value>,
}

/// Builds the JSON request body; message order and roles are copied from
/// the prompt one-to-one.
pub fn request_body(prompt: &ChatPrompt, cfg: &EndpointConfig) -> serde_json::Value {
    json!({
        "model": cfg.model_name,
        "messages": prompt.messages,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_output_tokens,
        "stream": false,
    })
}

/// Stateless apart from the connection pool; safe to reuse across runs.
#[derive(Debug, Clone)]
pub struct LlmClient {
    http: reqwest::blocking::Client,
    backoff: Duration,
}

impl LlmClient {
    pub fn new(cfg: &EndpointConfig) -> Result<Self, ClientError> {
        cfg.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(cfg.request_timeout)
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        Ok(LlmClient { http, backoff: BACKOFF_BASE })
    }

    /// Overrides the base of the exponential retry backoff.
    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff = base;
        self
    }

    fn authorized(&self, req: reqwest::blocking::RequestBuilder, cfg: &EndpointConfig) -> reqwest::blocking::RequestBuilder {
        match &cfg.api_key {
            Some(key) => req.bearer_auth(key),
            None => req,
        }
    }

    fn classify(err: reqwest::Error, cfg: &EndpointConfig, attempts: u32) -> ClientError {
        if err.is_timeout() {
            ClientError::Timeout(cfg.request_timeout)
        } else if err.is_decode() || err.is_body() {
            ClientError::Malformed(err.to_string())
        } else {
            ClientError::Unreachable { attempts, message: err.to_string() }
        }
    }

    /// Sends the prompt and returns the first choice's content verbatim.
    pub fn complete(&self, prompt: &ChatPrompt, cfg: &EndpointConfig) -> Result<CompletionResult, ClientError> {
        let body = request_body(prompt, cfg);
        let url = cfg.endpoint("chat/completions");
        let mut attempt = 1;
        loop {
            match self.complete_once(&url, &body, cfg, attempt) {
                Err(e) if e.is_network() && attempt < MAX_ATTEMPTS => {
                    let wait = self.backoff * 2u32.pow(attempt - 1);
                    log::warn!("attempt {attempt}/{MAX_ATTEMPTS} failed ({e}); retrying in {wait:?}");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn complete_once(
        &self,
        url: &str,
        body: &serde_json::Value,
        cfg: &EndpointConfig,
        attempt: u32,
    ) -> Result<CompletionResult, ClientError> {
        let dispatched = Instant::now();
        let resp = self
            .authorized(self.http.post(url).json(body), cfg)
            .send()
            .map_err(|e| Self::classify(e, cfg, attempt))?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| Self::classify(e, cfg, attempt))?;
        let latency = dispatched.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
        if !status.is_success() {
            return Err(ClientError::Status {
                status: status.as_u16(),
                body: String::from_utf8_lossy(&bytes).chars().take(512).collect(),
            });
        }
        let parsed: CompletionBody =
            serde_json::from_slice(&bytes).map_err(|e| ClientError::Malformed(e.to_string()))?;
        let first = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ClientError::Malformed("response has no choices".into()))?;
        let text = first
            .message
            .content
            .ok_or_else(|| ClientError::Malformed("first choice has no content".into()))?;
        Ok(CompletionResult {
            text,
            prompt_tokens: parsed.usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: parsed.usage.as_ref().and_then(|u| u.completion_tokens),
            latency,
            attempts: attempt,
        })
    }

    /// Confirms the endpoint answers and lists the configured model.
    /// Returns the model's descriptor object as served.
    pub fn health_check(&self, cfg: &EndpointConfig) -> Result<serde_json::Value, ClientError> {
        let resp = self
            .authorized(self.http.get(cfg.endpoint("models")), cfg)
            .send()
            .map_err(|e| Self::classify(e, cfg, 1))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(ClientError::Status { status: status.as_u16(), body });
        }
        let list: ModelList = resp.json().map_err(|e| ClientError::Malformed(e.to_string()))?;
        let ids: Vec<String> = list
            .data
            .iter()
            .filter_map(|m| m.get("id").and_then(|v| v.as_str()).map(str::to_string))
            .collect();
        list.data
            .into_iter()
            .find(|m| m.get("id").and_then(|v| v.as_str()) == Some(cfg.model_name.as_str()))
            .ok_or(ClientError::ModelNotFound { wanted: cfg.model_name.clone(), available: ids })
    }
}
