//! In-process backends for offline, reproducible runs.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError, Usage};
use crate::tokens::{default_tokenizer, SharedTokenizer};

/// Produces the text of a completion. Usage is filled in by [`LocalBackend`].
pub trait Responder: Send + Sync {
    fn respond(&self, request: &ChatRequest) -> Result<String, GatewayError>;
}

impl<F> Responder for F
where
    F: Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync,
{
    fn respond(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        self(request)
    }
}

/// Wraps a [`Responder`], counts usage with a tokenizer and logs every request.
pub struct LocalBackend {
    responder: Arc<dyn Responder>,
    tokenizer: SharedTokenizer,
    name: String,
    log: Mutex<Vec<ChatRequest>>,
}

impl LocalBackend {
    pub fn new(name: impl Into<String>, responder: impl Responder + 'static) -> Self {
        LocalBackend {
            responder: Arc::new(responder),
            tokenizer: default_tokenizer(),
            name: name.into(),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn with_tokenizer(mut self, tokenizer: SharedTokenizer) -> Self {
        self.tokenizer = tokenizer;
        self
    }

    pub fn calls(&self) -> Vec<ChatRequest> {
        self.log.lock().expect("log lock").clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().expect("log lock").len()
    }
}

impl ChatBackend for LocalBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.log.lock().expect("log lock").push(request.clone());
        let content = self.responder.respond(request)?;
        let input_tokens = request
            .messages
            .iter()
            .map(|m| self.tokenizer.count(&m.content) as u64)
            .sum();
        Ok(ChatResponse {
            usage: Usage {
                input_tokens,
                cached_input_tokens: 0,
                output_tokens: self.tokenizer.count(&content) as u64,
            },
            content,
            provider_id: self.name.clone(),
            cached: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    /// Matches when the prompt text contains this literal.
    Contains(String),
    /// Matches the SHA-256 hex digest of the whole prompt text.
    PromptHash(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(flatten)]
    pub matcher: Matcher,
    pub response: String,
}

impl ScriptRule {
    pub fn contains(needle: impl Into<String>, response: impl Into<String>) -> Self {
        ScriptRule {
            matcher: Matcher::Contains(needle.into()),
            response: response.into(),
        }
    }
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Canned responses keyed by prompt matchers.
///
/// A prompt-hash match beats any substring match; among substring matches
/// the longest literal wins, then the earliest rule.
#[derive(Debug, Clone, Default)]
pub struct ScriptedResponder {
    pub rules: Vec<ScriptRule>,
}

impl ScriptedResponder {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        ScriptedResponder { rules }
    }

    pub fn select(&self, prompt: &str) -> Option<&ScriptRule> {
        let hash = prompt_hash(prompt);
        if let Some(rule) = self
            .rules
            .iter()
            .find(|r| matches!(&r.matcher, Matcher::PromptHash(h) if h.eq_ignore_ascii_case(&hash)))
        {
            return Some(rule);
        }
        let mut best: Option<&ScriptRule> = None;
        for rule in &self.rules {
            if let Matcher::Contains(needle) = &rule.matcher {
                if prompt.contains(needle.as_str()) {
                    let longer = match best {
                        Some(ScriptRule {
                            matcher: Matcher::Contains(b),
                            ..
                        }) => needle.len() > b.len(),
                        _ => true,
                    };
                    if longer {
                        best = Some(rule);
                    }
                }
            }
        }
        best
    }

    fn nearest(&self, prompt: &str) -> Option<String> {
        let prompt_words: Vec<&str> = prompt.split_whitespace().collect();
        let mut best: Option<(usize, &Matcher)> = None;
        for rule in &self.rules {
            let text = match &rule.matcher {
                Matcher::Contains(s) | Matcher::PromptHash(s) => s,
            };
            let shared = text
                .split_whitespace()
                .filter(|w| prompt_words.contains(w))
                .count();
            if best.is_none_or(|(s, _)| shared > s) {
                best = Some((shared, &rule.matcher));
            }
        }
        best.map(|(_, m)| match m {
            Matcher::Contains(s) => s.clone(),
            Matcher::PromptHash(h) => format!("hash:{h}"),
        })
    }
}

impl Responder for ScriptedResponder {
    fn respond(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let prompt = request.prompt_text();
        self.select(&prompt)
            .map(|r| r.response.clone())
            .ok_or_else(|| GatewayError::Unmatched {
                nearest: self.nearest(&prompt),
            })
    }
}

/// A deterministic backend answering from `script`.
pub fn script_mock(script: Vec<ScriptRule>) -> LocalBackend {
    LocalBackend::new("scripted-mock", ScriptedResponder::new(script))
}
