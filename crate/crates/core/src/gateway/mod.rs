//! Provider-agnostic chat completion.
//!
//! Every LLM role (agent, compressor, optimizer) talks to a [`Gateway`],
//! which adds response caching and retry with exponential backoff on top of
//! a [`ChatBackend`]: the HTTP adapter in [`live`] or an in-process
//! [`mock::LocalBackend`].

pub mod cache;
pub mod live;
pub mod mock;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{CallRecord, Channel, TokenLedger};

pub use cache::ResponseCache;
pub use live::{HttpBackend, HttpConfig, API_KEY_ENV};
pub use mock::{
    prompt_hash, script_mock, LocalBackend, Matcher, Responder, ScriptRule, ScriptedResponder,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub seed: u64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<Message>) -> Self {
        ChatRequest {
            model: model.into(),
            messages,
            temperature: 0.0,
            seed: 42,
            max_output_tokens: 4096,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest(
                "messages must be nonempty".into(),
            ));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(
                "temperature must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// All message contents joined by newlines; what mock matchers see.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn system_text(&self) -> Option<&str> {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub cached_input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub usage: Usage,
    pub provider_id: String,
    /// Served from the response cache.
    #[serde(default)]
    pub cached: bool,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend failure: {0}")]
    Fatal(String),
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("no script rule matches the prompt{}", nearest.as_ref().map(|n| format!(" (nearest matcher: {n:?})")).unwrap_or_default())]
    Unmatched { nearest: Option<String> },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache: {0}")]
    Cache(String),
}

impl GatewayError {
    pub fn is_transient(&self) -> bool {
        matches!(self, GatewayError::Transient(_))
    }
}

pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).send(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    fn delay(&self, retry: u32) -> Duration {
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << retry.min(20))
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    cache: Option<Arc<ResponseCache>>,
    retry: RetryPolicy,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Gateway {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let key = self.cache.as_ref().map(|_| cache::cache_key(request));
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(mut hit) = cache.get(key)? {
                hit.usage.cached_input_tokens = hit.usage.input_tokens;
                hit.cached = true;
                return Ok(hit);
            }
        }

        let mut attempt = 0u32;
        let response = loop {
            match self.backend.send(request) {
                Ok(r) => break r,
                Err(e) if e.is_transient() && attempt < self.retry.max_retries => {
                    log::warn!("transient failure on attempt {}: {e}", attempt + 1);
                    std::thread::sleep(self.retry.delay(attempt));
                    attempt += 1;
                }
                Err(e) if e.is_transient() => {
                    return Err(GatewayError::ExhaustedRetries {
                        attempts: attempt + 1,
                        last: e.to_string(),
                    })
                }
                Err(e) => return Err(e),
            }
        };
        if response.usage.cached_input_tokens > response.usage.input_tokens {
            return Err(GatewayError::Malformed(
                "cached tokens exceed input tokens".into(),
            ));
        }

        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            cache.put(key, &response)?;
        }
        Ok(response)
    }

    /// Completes and appends the call's usage to `ledger`.
    pub fn complete_recorded(
        &self,
        request: &ChatRequest,
        ledger: &mut TokenLedger,
        channel: Channel,
        step: usize,
        system_tokens: u64,
    ) -> Result<ChatResponse, GatewayError> {
        let response = self.complete(request)?;
        ledger.record(CallRecord {
            channel,
            step,
            model: request.model.clone(),
            input_tokens: response.usage.input_tokens,
            cached_input_tokens: response.usage.cached_input_tokens,
            output_tokens: response.usage.output_tokens,
            system_tokens: system_tokens.min(response.usage.input_tokens),
        });
        Ok(response)
    }
}
