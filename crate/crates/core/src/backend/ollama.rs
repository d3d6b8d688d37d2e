//! Ollama-compatible `/api/generate` client.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::BackendError;
use crate::http::{join_url, HttpTransport};

/// How long the server should keep the model loaded after a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeepAlive {
    /// `keep_alive: 0`, unload as soon as the response is complete.
    Release,
    /// `keep_alive: -1`, keep the model loaded.
    Resident,
}

impl KeepAlive {
    pub fn wire_value(self) -> i64 {
        match self {
            KeepAlive::Release => 0,
            KeepAlive::Resident => -1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateOptions {
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub model: String,
    pub prompt: String,
    pub stream: bool,
    pub keep_alive: i64,
    pub options: GenerateOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub response: String,
    #[serde(default)]
    pub eval_count: Option<u64>,
    /// Nanoseconds.
    #[serde(default)]
    pub eval_duration: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_duration: Option<u64>,
    #[serde(default)]
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RawGeneration {
    pub response: String,
    pub eval_count: u64,
    pub duration_ns: u64,
}

pub struct OllamaClient {
    base_url: String,
    transport: Arc<dyn HttpTransport>,
}

impl OllamaClient {
    pub fn new(base_url: impl Into<String>, transport: Arc<dyn HttpTransport>) -> Self {
        Self {
            base_url: base_url.into(),
            transport,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn request_body(model: &str, prompt: &str, keep_alive: KeepAlive) -> GenerateRequest {
        GenerateRequest {
            model: model.to_string(),
            prompt: prompt.to_string(),
            stream: false,
            keep_alive: keep_alive.wire_value(),
            options: GenerateOptions { temperature: 0.0 },
        }
    }

    pub(crate) fn generate(
        &self,
        model: &str,
        prompt: &str,
        keep_alive: KeepAlive,
    ) -> Result<RawGeneration, BackendError> {
        let body = serde_json::to_string(&Self::request_body(model, prompt, keep_alive))
            .expect("request serializes");
        let resp = self
            .transport
            .post_json(&join_url(&self.base_url, "api/generate"), &body)
            .map_err(|e| BackendError::Transport {
                attempts: 1,
                message: e.0,
            })?;

        match resp.status {
            200..=299 => {}
            404 => return Err(BackendError::UnknownModel(model.to_string())),
            500..=599 => {
                return Err(BackendError::Transport {
                    attempts: 1,
                    message: format!("server error {}: {}", resp.status, resp.body),
                })
            }
            s => {
                return Err(BackendError::Protocol(format!(
                    "unexpected status {s}: {}",
                    resp.body
                )))
            }
        }

        let parsed: GenerateResponse = serde_json::from_str(&resp.body)
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        let duration_ns = parsed
            .eval_duration
            .filter(|d| *d > 0)
            .or(parsed.total_duration.filter(|d| *d > 0))
            .ok_or_else(|| BackendError::Protocol("response carries no positive duration".into()))?;
        Ok(RawGeneration {
            response: parsed.response,
            eval_count: parsed.eval_count.unwrap_or(0),
            duration_ns,
        })
    }

    /// `GET /api/tags` answers with a 2xx.
    pub fn health(&self) -> bool {
        self.transport
            .get(&join_url(&self.base_url, "api/tags"))
            .map(|r| r.is_success())
            .unwrap_or(false)
    }
}
