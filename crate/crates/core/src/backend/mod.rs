//! Model manager and inference backends.
//!
//! The manager maps tiers to model names, talks to an Ollama-compatible
//! server through [`OllamaClient`], retries transient transport failures and
//! enforces single residency: a request for a different model waits until
//! in-flight requests for the resident model have finished.

mod mock;
mod ollama;

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, Nanos};
use crate::domain::ModelTier;
use crate::http::HttpTransport;

pub use mock::{MockBackend, MockConfig, MockTierParams};
pub use ollama::{GenerateOptions, GenerateRequest, GenerateResponse, KeepAlive, OllamaClient};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub tier: ModelTier,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resident_memory_hint: Option<u64>,
}

/// Default tier → model names.
pub fn reference_model_names() -> BTreeMap<ModelTier, String> {
    BTreeMap::from([
        (ModelTier::Small, "gemma3:1b".to_string()),
        (ModelTier::Medium, "gemma3:4b".to_string()),
        (ModelTier::Large, "qwen3:4b".to_string()),
    ])
}

pub fn specs_from_names(names: &BTreeMap<ModelTier, String>) -> Vec<ModelSpec> {
    names
        .iter()
        .map(|(tier, name)| ModelSpec {
            tier: *tier,
            model_name: name.clone(),
            resident_memory_hint: None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub tokens_generated: u64,
    /// As reported by the backend.
    pub generation_duration_ns: u64,
    pub model_name: String,
    pub tier: ModelTier,
    /// Observed request window on the manager's clock.
    pub started_at: Nanos,
    pub finished_at: Nanos,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("no model configured for tier {0}")]
    UnmappedTier(ModelTier),
    #[error("backend does not know model '{0}'")]
    UnknownModel(String),
    #[error("backend unreachable after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("model configuration: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub retries: u32,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 2,
            backoff: Duration::from_millis(250),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidencyState {
    pub resident_model: Option<String>,
    pub switch_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResidencyEventKind {
    Loaded,
    Released,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidencyEvent {
    pub at: Nanos,
    pub model: String,
    pub kind: ResidencyEventKind,
}

const TRACE_CAPACITY: usize = 16_384;

#[derive(Default)]
struct Residency {
    resident: Option<String>,
    last_loaded: Option<String>,
    in_flight: usize,
    switch_count: u64,
    trace: VecDeque<ResidencyEvent>,
}

impl Residency {
    fn log(&mut self, at: Nanos, model: &str, kind: ResidencyEventKind) {
        if self.trace.len() == TRACE_CAPACITY {
            self.trace.pop_front();
        }
        self.trace.push_back(ResidencyEvent {
            at,
            model: model.to_string(),
            kind,
        });
    }
}

pub struct ModelManager {
    client: OllamaClient,
    specs: BTreeMap<ModelTier, ModelSpec>,
    keep_alive: KeepAlive,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
    residency: Mutex<Residency>,
    turn: Condvar,
}

impl ModelManager {
    pub fn new(
        base_url: impl Into<String>,
        transport: Arc<dyn HttpTransport>,
        specs: Vec<ModelSpec>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, BackendError> {
        let mut by_tier = BTreeMap::new();
        for spec in specs {
            if by_tier.insert(spec.tier, spec.clone()).is_some() {
                return Err(BackendError::Config(format!(
                    "more than one model for tier {}",
                    spec.tier
                )));
            }
        }
        Ok(Self {
            client: OllamaClient::new(base_url, transport),
            specs: by_tier,
            keep_alive: KeepAlive::Release,
            retry: RetryPolicy::default(),
            clock,
            residency: Mutex::new(Residency::default()),
            turn: Condvar::new(),
        })
    }

    /// Manager wired to an in-process mock server.
    pub fn with_mock(mock: Arc<MockBackend>, clock: Arc<dyn Clock>) -> Self {
        let specs = specs_from_names(mock.model_names());
        Self::new("http://mock", mock, specs, clock).expect("mock specs are unique")
    }

    pub fn with_keep_alive(mut self, keep_alive: KeepAlive) -> Self {
        self.keep_alive = keep_alive;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn keep_alive(&self) -> KeepAlive {
        self.keep_alive
    }

    pub fn specs(&self) -> impl Iterator<Item = &ModelSpec> {
        self.specs.values()
    }

    pub fn model_names(&self) -> BTreeMap<ModelTier, String> {
        self.specs
            .iter()
            .map(|(t, s)| (*t, s.model_name.clone()))
            .collect()
    }

    pub fn client(&self) -> &OllamaClient {
        &self.client
    }

    pub fn residency(&self) -> ResidencyState {
        let r = self.residency.lock().expect("residency lock");
        ResidencyState {
            resident_model: r.resident.clone(),
            switch_count: r.switch_count,
        }
    }

    pub fn residency_trace(&self) -> Vec<ResidencyEvent> {
        self.residency
            .lock()
            .expect("residency lock")
            .trace
            .iter()
            .cloned()
            .collect()
    }

    pub fn health(&self) -> bool {
        self.client.health()
    }

    fn acquire(&self, model: &str) {
        let mut r = self.residency.lock().expect("residency lock");
        while r.in_flight > 0 && r.resident.as_deref() != Some(model) {
            r = self.turn.wait(r).expect("residency lock");
        }
        if r.resident.as_deref() != Some(model) {
            let now = self.clock.now();
            if let Some(prev) = r.resident.take() {
                r.log(now, &prev, ResidencyEventKind::Released);
            }
            if r.last_loaded.as_deref() != Some(model) {
                r.switch_count += 1;
            }
            r.resident = Some(model.to_string());
            r.last_loaded = Some(model.to_string());
            r.log(now, model, ResidencyEventKind::Loaded);
        }
        r.in_flight += 1;
    }

    fn release(&self) {
        let mut r = self.residency.lock().expect("residency lock");
        r.in_flight -= 1;
        if r.in_flight == 0 && self.keep_alive == KeepAlive::Release {
            if let Some(prev) = r.resident.take() {
                let now = self.clock.now();
                r.log(now, &prev, ResidencyEventKind::Released);
            }
        }
        drop(r);
        self.turn.notify_all();
    }

    pub fn generate(&self, tier: ModelTier, prompt: &str) -> Result<GenerationResult, BackendError> {
        let spec = self.specs.get(&tier).ok_or(BackendError::UnmappedTier(tier))?;
        let model = spec.model_name.as_str();

        self.acquire(model);
        let started_at = self.clock.now();
        let result = self.generate_with_retries(model, prompt);
        let finished_at = self.clock.now();
        self.release();

        let raw = result?;
        Ok(GenerationResult {
            text: raw.response,
            tokens_generated: raw.eval_count,
            generation_duration_ns: raw.duration_ns,
            model_name: model.to_string(),
            tier,
            started_at,
            finished_at,
        })
    }

    fn generate_with_retries(&self, model: &str, prompt: &str) -> Result<ollama::RawGeneration, BackendError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.client.generate(model, prompt, self.keep_alive) {
                Err(BackendError::Transport { message, .. }) if attempt <= self.retry.retries => {
                    tracing::debug!(attempt, %message, "backend transport error, retrying");
                    self.clock.sleep(self.retry.backoff);
                }
                Err(BackendError::Transport { message, .. }) => {
                    return Err(BackendError::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                other => return other,
            }
        }
    }
}
