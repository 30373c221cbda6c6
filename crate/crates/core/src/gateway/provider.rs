use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::cache::ResponseCache;
use crate::digest::framed_sha256_hex;

pub const API_KEY_ENV: &str = "HIERTREE_API_KEY";
pub const API_URL_ENV: &str = "HIERTREE_API_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    /// Name of the template that rendered this request.
    pub template: String,
    pub system: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ProviderRequest {
    /// Content hash of the template name and the rendered prompt text.
    pub fn cache_key(&self) -> String {
        framed_sha256_hex([
            self.template.as_bytes(),
            self.system.as_bytes(),
            self.prompt.as_bytes(),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub text: String,
    pub provider_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("no recorded response for key {0}")]
    CacheMiss(String),
    #[error("provider misconfigured: {0}")]
    Config(String),
}

impl ProviderError {
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderError::Transport(_) => true,
            ProviderError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Source of chat completions.
pub trait DescriptionProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError>;
}

/// OpenAI-style chat-completion endpoint.
pub struct HttpChatProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
    model: String,
    id: String,
}

impl HttpChatProvider {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: Option<String>,
        model: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        let model = model.into();
        Ok(Self {
            client,
            endpoint: endpoint.into(),
            api_key,
            id: format!("http:{model}"),
            model,
        })
    }

    /// Endpoint from `HIERTREE_API_URL`, bearer token from `HIERTREE_API_KEY`.
    pub fn from_env(model: impl Into<String>, timeout: Duration) -> Result<Self, ProviderError> {
        let endpoint = std::env::var(API_URL_ENV)
            .map_err(|_| ProviderError::Config(format!("{API_URL_ENV} is not set")))?;
        Self::new(endpoint, std::env::var(API_KEY_ENV).ok(), model, timeout)
    }

    pub fn request_body(&self, request: &ProviderRequest) -> serde_json::Value {
        let mut messages = Vec::new();
        if !request.system.is_empty() {
            messages.push(json!({"role": "system", "content": request.system}));
        }
        messages.push(json!({"role": "user", "content": request.prompt}));
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }
}

impl DescriptionProvider for HttpChatProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let mut call = self
            .client
            .post(&self.endpoint)
            .json(&self.request_body(request));
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let response = call
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ProviderError::Status {
                status: status.as_u16(),
                body,
            });
        }
        let value: serde_json::Value =
            serde_json::from_str(&body).map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                ProviderError::BadResponse("missing choices[0].message.content".into())
            })?;
        Ok(ProviderResponse {
            text: text.to_string(),
            provider_id: self.id.clone(),
        })
    }
}

type Script = dyn Fn(&ProviderRequest) -> Result<String, ProviderError> + Send + Sync;

/// Answers from a closure and records every request it sees.
pub struct ScriptedProvider {
    id: String,
    script: Box<Script>,
    calls: Mutex<Vec<ProviderRequest>>,
}

impl ScriptedProvider {
    pub fn new<F>(id: impl Into<String>, script: F) -> Self
    where
        F: Fn(&ProviderRequest) -> Result<String, ProviderError> + Send + Sync + 'static,
    {
        Self {
            id: id.into(),
            script: Box::new(script),
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Always answers with `text`.
    pub fn constant(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(id, move |_| Ok(text.clone()))
    }

    pub fn calls(&self) -> Vec<ProviderRequest> {
        self.calls.lock().expect("calls lock").clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().expect("calls lock").len()
    }
}

impl DescriptionProvider for ScriptedProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        self.calls.lock().expect("calls lock").push(request.clone());
        (self.script)(request).map(|text| ProviderResponse {
            text,
            provider_id: self.id.clone(),
        })
    }
}

/// Serves recorded responses only. Holds no network client.
pub struct ReplayProvider {
    fixtures: ResponseCache,
}

impl ReplayProvider {
    pub fn new(fixtures: ResponseCache) -> Self {
        Self { fixtures }
    }

    pub fn open(dir: impl Into<std::path::PathBuf>) -> std::io::Result<Self> {
        ResponseCache::open_read_only(dir).map(Self::new)
    }
}

impl DescriptionProvider for ReplayProvider {
    fn provider_id(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let key = request.cache_key();
        match self.fixtures.get(&key) {
            Ok(Some(entry)) => Ok(ProviderResponse {
                text: entry.response,
                provider_id: entry.provider_id,
            }),
            Ok(None) => Err(ProviderError::CacheMiss(key)),
            Err(e) => Err(ProviderError::BadResponse(e.to_string())),
        }
    }
}
