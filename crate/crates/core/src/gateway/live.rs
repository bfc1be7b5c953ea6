//! HTTP adapter for OpenAI-style chat completion endpoints.
//!
//! Request body: `{"model", "messages": [{"role", "content"}], "temperature",
//! "seed", "max_tokens"}`. Response: `choices[0].message.content` plus
//! `usage.prompt_tokens`, `usage.completion_tokens` and optionally
//! `usage.prompt_tokens_details.cached_tokens`.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError, Usage};

pub const API_KEY_ENV: &str = "ACON_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    /// Appended to `base_url`; `{model}` is replaced by the model name.
    pub path_template: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "https://api.openai.com".into(),
            path_template: "/v1/chat/completions".into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            timeout: Duration::from_secs(120),
            max_in_flight: 8,
        }
    }
}

struct InFlight {
    count: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.count.lock().expect("limiter lock");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("limiter lock");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.count.lock().expect("limiter lock") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    in_flight: InFlight,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let limit = config.max_in_flight.max(1);
        HttpBackend {
            config,
            agent,
            in_flight: InFlight {
                count: Mutex::new(0),
                freed: Condvar::new(),
                limit,
            },
        }
    }

    fn url(&self, model: &str) -> String {
        format!(
            "{}{}",
            self.config.base_url.trim_end_matches('/'),
            self.config.path_template.replace("{model}", model)
        )
    }
}

pub fn request_body(request: &ChatRequest) -> Value {
    json!({
        "model": request.model,
        "messages": request.messages,
        "temperature": request.temperature,
        "seed": request.seed,
        "max_tokens": request.max_output_tokens,
    })
}

pub fn parse_response(body: &Value) -> Result<ChatResponse, GatewayError> {
    let content = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::Malformed("missing choices[0].message.content".into()))?;
    let count = |ptr: &str| body.pointer(ptr).and_then(Value::as_u64);
    let input_tokens = count("/usage/prompt_tokens")
        .ok_or_else(|| GatewayError::Malformed("missing usage.prompt_tokens".into()))?;
    let output_tokens = count("/usage/completion_tokens")
        .ok_or_else(|| GatewayError::Malformed("missing usage.completion_tokens".into()))?;
    let cached_input_tokens = count("/usage/prompt_tokens_details/cached_tokens").unwrap_or(0);
    Ok(ChatResponse {
        content: content.to_string(),
        usage: Usage {
            input_tokens,
            cached_input_tokens,
            output_tokens,
        },
        provider_id: body
            .get("id")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string(),
        cached: false,
    })
}

impl ChatBackend for HttpBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let _permit = self.in_flight.acquire();
        let mut builder = self.agent.post(self.url(&request.model));
        if let Some(key) = &self.config.api_key {
            builder = builder.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = builder
            .send_json(request_body(request))
            .map_err(|e| GatewayError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| GatewayError::Transient(e.to_string()))?;
        match status {
            200..=299 => {
                let body: Value = serde_json::from_str(&text)
                    .map_err(|e| GatewayError::Malformed(e.to_string()))?;
                parse_response(&body)
            }
            408 | 409 | 429 | 500..=599 => {
                Err(GatewayError::Transient(format!("HTTP {status}: {text}")))
            }
            _ => Err(GatewayError::Fatal(format!("HTTP {status}: {text}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, Message, RetryPolicy};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    /// Serves the given (status, body) pairs in order, one per connection,
    /// and returns the request bodies it saw.
    fn serve(replies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in replies {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push(String::from_utf8(buf).unwrap());
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
            seen
        });
        (addr, handle)
    }

    fn ok_body() -> String {
        json!({
            "id": "cmpl-1",
            "choices": [{"message": {"role": "assistant", "content": "hello"}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 3, "prompt_tokens_details": {"cached_tokens": 4}}
        })
        .to_string()
    }

    fn backend(addr: String) -> HttpBackend {
        HttpBackend::new(HttpConfig {
            base_url: addr,
            path_template: "/v1/chat/completions".into(),
            api_key: Some("k".into()),
            timeout: Duration::from_secs(5),
            max_in_flight: 2,
        })
    }

    #[test]
    fn round_trip_against_local_server() {
        let (addr, handle) = serve(vec![(200, ok_body())]);
        let mut req =
            ChatRequest::new("gpt-4.1", vec![Message::system("sys"), Message::user("hi")]);
        req.max_output_tokens = 64;
        let resp = backend(addr).send(&req).unwrap();
        assert_eq!(resp.content, "hello");
        assert_eq!(
            resp.usage,
            Usage {
                input_tokens: 12,
                cached_input_tokens: 4,
                output_tokens: 3
            }
        );
        assert_eq!(resp.provider_id, "cmpl-1");
        let sent: Value = serde_json::from_str(&handle.join().unwrap()[0]).unwrap();
        assert_eq!(sent["model"], "gpt-4.1");
        assert_eq!(sent["messages"][0]["role"], "system");
        assert_eq!(sent["seed"], 42);
        assert_eq!(sent["max_tokens"], 64);
    }

    #[test]
    fn server_errors_are_retried() {
        let (addr, handle) = serve(vec![
            (503, "{}".into()),
            (429, "{}".into()),
            (200, ok_body()),
        ]);
        let gw = Gateway::new(Arc::new(backend(addr))).with_retry(RetryPolicy::immediate(3));
        let resp = gw
            .complete(&ChatRequest::new("m", vec![Message::user("x")]))
            .unwrap();
        assert_eq!(resp.content, "hello");
        assert_eq!(handle.join().unwrap().len(), 3);
    }

    #[test]
    fn client_errors_are_fatal() {
        let (addr, _handle) = serve(vec![(401, "{\"error\":\"bad key\"}".into())]);
        let err = backend(addr)
            .send(&ChatRequest::new("m", vec![Message::user("x")]))
            .unwrap_err();
        assert!(matches!(err, GatewayError::Fatal(_)));
    }

    #[test]
    fn malformed_bodies() {
        assert!(matches!(
            parse_response(&json!({"choices": []})),
            Err(GatewayError::Malformed(_))
        ));
        let no_usage = json!({"choices": [{"message": {"content": "x"}}]});
        assert!(matches!(
            parse_response(&no_usage),
            Err(GatewayError::Malformed(_))
        ));
    }
}
