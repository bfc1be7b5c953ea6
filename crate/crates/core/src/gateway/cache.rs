//! Content-addressed response cache.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{ChatRequest, ChatResponse, GatewayError, Message};
use crate::io::write_atomic;

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    seed: u64,
}

/// SHA-256 over model, messages, temperature and seed.
pub fn cache_key(request: &ChatRequest) -> String {
    let material = KeyMaterial {
        model: &request.model,
        messages: &request.messages,
        temperature: request.temperature,
        seed: request.seed,
    };
    let bytes = serde_json::to_vec(&material).expect("key material serializes");
    hex::encode(Sha256::digest(bytes))
}

/// In-memory map, optionally mirrored to `<dir>/<key>.json`.
///
/// Concurrent writers of the same key store identical values, so the last
/// write wins without coordination.
#[derive(Debug, Default)]
pub struct ResponseCache {
    memory: Mutex<HashMap<String, ChatResponse>>,
    dir: Option<PathBuf>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| GatewayError::Cache(e.to_string()))?;
        Ok(ResponseCache {
            memory: Mutex::default(),
            dir: Some(dir),
        })
    }

    pub fn get(&self, key: &str) -> Result<Option<ChatResponse>, GatewayError> {
        if let Some(hit) = self.memory.lock().expect("cache lock").get(key) {
            return Ok(Some(hit.clone()));
        }
        let Some(dir) = &self.dir else {
            return Ok(None);
        };
        let path = dir.join(format!("{key}.json"));
        match std::fs::read_to_string(&path) {
            Ok(text) => {
                let response: ChatResponse =
                    serde_json::from_str(&text).map_err(|e| GatewayError::Cache(e.to_string()))?;
                self.memory
                    .lock()
                    .expect("cache lock")
                    .insert(key.to_string(), response.clone());
                Ok(Some(response))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(GatewayError::Cache(e.to_string())),
        }
    }

    pub fn put(&self, key: &str, response: &ChatResponse) -> Result<(), GatewayError> {
        self.memory
            .lock()
            .expect("cache lock")
            .insert(key.to_string(), response.clone());
        if let Some(dir) = &self.dir {
            let bytes =
                serde_json::to_vec(response).map_err(|e| GatewayError::Cache(e.to_string()))?;
            write_atomic(&dir.join(format!("{key}.json")), &bytes)
                .map_err(|e| GatewayError::Cache(e.to_string()))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.memory.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Usage;

    fn response() -> ChatResponse {
        ChatResponse {
            content: "hi".into(),
            usage: Usage {
                input_tokens: 2,
                cached_input_tokens: 0,
                output_tokens: 1,
            },
            provider_id: "t".into(),
            cached: false,
        }
    }

    #[test]
    fn key_depends_on_seed_and_temperature_only_among_sampling_params() {
        let base = ChatRequest::new("m", vec![Message::user("x")]);
        let mut other_seed = base.clone();
        other_seed.seed = 7;
        let mut other_temp = base.clone();
        other_temp.temperature = 0.5;
        let mut other_max = base.clone();
        other_max.max_output_tokens = 1;
        assert_ne!(cache_key(&base), cache_key(&other_seed));
        assert_ne!(cache_key(&base), cache_key(&other_temp));
        assert_eq!(cache_key(&base), cache_key(&other_max));
    }

    #[test]
    fn disk_cache_survives_new_instance() {
        let dir = tempfile::tempdir().unwrap();
        let key = "abc";
        ResponseCache::on_disk(dir.path())
            .unwrap()
            .put(key, &response())
            .unwrap();
        let fresh = ResponseCache::on_disk(dir.path()).unwrap();
        assert_eq!(fresh.get(key).unwrap(), Some(response()));
        assert_eq!(fresh.get("missing").unwrap(), None);
    }
}
