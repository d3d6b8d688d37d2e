//! In-process stand-in for an Ollama server.
//!
//! Responses are deterministic: the text is a tier tag plus the prompt's
//! SHA-256 split into eight words, token counts and durations come from a
//! per-tier table, and the request waits `latency × time_scale` on the
//! injected clock. The mock tracks which model is loaded so that it can
//! report its own power draw and count any overlapping residency.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{reference_model_names, GenerateRequest, GenerateResponse};
use crate::clock::{secs_to_nanos, Clock, Nanos};
use crate::domain::ModelTier;
use crate::http::{HttpResponse, HttpTransport, TransportError};
use crate::telemetry::{PowerSample, PowerSampler};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockTierParams {
    pub latency_seconds: f64,
    pub tokens_out: u64,
    pub power_watts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    /// Wall time spent per request as a fraction of the reported latency.
    pub time_scale: f64,
    pub tiers: BTreeMap<ModelTier, MockTierParams>,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            time_scale: 0.01,
            tiers: BTreeMap::from([
                (
                    ModelTier::Small,
                    MockTierParams {
                        latency_seconds: 0.3,
                        tokens_out: 40,
                        power_watts: 10.0,
                    },
                ),
                (
                    ModelTier::Medium,
                    MockTierParams {
                        latency_seconds: 3.0,
                        tokens_out: 120,
                        power_watts: 25.0,
                    },
                ),
                (
                    ModelTier::Large,
                    MockTierParams {
                        latency_seconds: 13.8,
                        tokens_out: 200,
                        power_watts: 40.0,
                    },
                ),
            ]),
        }
    }
}

const CAPTURE_LIMIT: usize = 16_384;
const INTERVAL_LIMIT: usize = 16_384;

struct Interval {
    id: u64,
    start: Nanos,
    end: Option<Nanos>,
    watts: f64,
}

#[derive(Default)]
struct MockState {
    resident: Option<String>,
    in_flight: usize,
    intervals: VecDeque<Interval>,
    next_id: u64,
    violations: u64,
    requests: u64,
    captured: VecDeque<String>,
    fail_next: u32,
}

pub struct MockBackend {
    models: BTreeMap<ModelTier, String>,
    by_name: HashMap<String, (ModelTier, MockTierParams)>,
    time_scale: f64,
    clock: Arc<dyn Clock>,
    state: Mutex<MockState>,
}

impl MockBackend {
    pub fn new(models: BTreeMap<ModelTier, String>, config: &MockConfig, clock: Arc<dyn Clock>) -> Self {
        let by_name = models
            .iter()
            .filter_map(|(tier, name)| config.tiers.get(tier).map(|p| (name.clone(), (*tier, *p))))
            .collect();
        Self {
            models,
            by_name,
            time_scale: config.time_scale,
            clock,
            state: Mutex::new(MockState::default()),
        }
    }

    /// Reference model names and tier parameters, time scale 0.01.
    pub fn reference(clock: Arc<dyn Clock>) -> Self {
        Self::new(reference_model_names(), &MockConfig::default(), clock)
    }

    pub fn model_names(&self) -> &BTreeMap<ModelTier, String> {
        &self.models
    }

    pub fn params(&self, tier: ModelTier) -> Option<MockTierParams> {
        self.models
            .get(&tier)
            .and_then(|n| self.by_name.get(n))
            .map(|(_, p)| *p)
    }

    pub fn time_scale(&self) -> f64 {
        self.time_scale
    }

    /// Deterministic response text for a tier and prompt.
    pub fn response_text(tier: ModelTier, prompt: &str) -> String {
        let digest = hex::encode(Sha256::digest(prompt.as_bytes()));
        let words: Vec<&str> = (0..8).map(|i| &digest[i * 8..(i + 1) * 8]).collect();
        format!("mock {} {}", tier.as_str(), words.join(" "))
    }

    /// Make the next `n` requests fail at the transport layer.
    pub fn fail_next_requests(&self, n: u32) {
        self.state.lock().expect("mock lock").fail_next = n;
    }

    pub fn captured_bodies(&self) -> Vec<String> {
        self.state
            .lock()
            .expect("mock lock")
            .captured
            .iter()
            .cloned()
            .collect()
    }

    pub fn request_count(&self) -> u64 {
        self.state.lock().expect("mock lock").requests
    }

    /// Times a model was asked to load while a different one was serving.
    pub fn residency_violations(&self) -> u64 {
        self.state.lock().expect("mock lock").violations
    }

    pub fn resident_model(&self) -> Option<String> {
        self.state.lock().expect("mock lock").resident.clone()
    }

    /// Power draw of whatever was serving at `at`; zero when idle.
    pub fn watts_at(&self, at: Nanos) -> f64 {
        let st = self.state.lock().expect("mock lock");
        st.intervals
            .iter()
            .rev()
            .filter(|iv| iv.start <= at && iv.end.is_none_or(|e| at < e))
            .map(|iv| iv.watts)
            .sum()
    }

    fn begin(&self, model: &str, watts: f64) -> u64 {
        let mut st = self.state.lock().expect("mock lock");
        if let Some(current) = st.resident.clone() {
            if current != model && st.in_flight > 0 {
                st.violations += 1;
                tracing::error!(resident = %current, requested = model, "overlapping model residency");
            }
        }
        st.resident = Some(model.to_string());
        st.in_flight += 1;
        let id = st.next_id;
        st.next_id += 1;
        if st.intervals.len() == INTERVAL_LIMIT {
            st.intervals.pop_front();
        }
        let start = self.clock.now();
        st.intervals.push_back(Interval {
            id,
            start,
            end: None,
            watts,
        });
        id
    }

    fn end(&self, id: u64, keep_alive: i64) {
        let mut st = self.state.lock().expect("mock lock");
        let now = self.clock.now();
        if let Some(iv) = st.intervals.iter_mut().rev().find(|iv| iv.id == id) {
            iv.end = Some(now);
        }
        st.in_flight -= 1;
        if st.in_flight == 0 && keep_alive == 0 {
            st.resident = None;
        }
    }

    fn handle_generate(&self, body: &str) -> Result<HttpResponse, TransportError> {
        {
            let mut st = self.state.lock().expect("mock lock");
            st.requests += 1;
            if st.captured.len() == CAPTURE_LIMIT {
                st.captured.pop_front();
            }
            st.captured.push_back(body.to_string());
            if st.fail_next > 0 {
                st.fail_next -= 1;
                return Err(TransportError("mock: connection reset".into()));
            }
        }
        let req: GenerateRequest = match serde_json::from_str(body) {
            Ok(r) => r,
            Err(e) => {
                return Ok(HttpResponse {
                    status: 400,
                    body: serde_json::json!({ "error": e.to_string() }).to_string(),
                })
            }
        };
        let Some((tier, params)) = self.by_name.get(&req.model).copied() else {
            return Ok(HttpResponse {
                status: 404,
                body: serde_json::json!({ "error": format!("model '{}' not found", req.model) })
                    .to_string(),
            });
        };

        let id = self.begin(&req.model, params.power_watts);
        let wall = Duration::from_secs_f64((params.latency_seconds * self.time_scale).max(0.0));
        self.clock.sleep(wall);
        self.end(id, req.keep_alive);

        let resp = GenerateResponse {
            model: Some(req.model.clone()),
            response: Self::response_text(tier, &req.prompt),
            eval_count: Some(params.tokens_out),
            eval_duration: Some(secs_to_nanos(params.latency_seconds)),
            total_duration: None,
            done: true,
        };
        Ok(HttpResponse::ok(
            serde_json::to_string(&resp).expect("response serializes"),
        ))
    }
}

impl HttpTransport for MockBackend {
    fn post_json(&self, url: &str, body: &str) -> Result<HttpResponse, TransportError> {
        if url.ends_with("/api/generate") {
            self.handle_generate(body)
        } else {
            Ok(HttpResponse {
                status: 404,
                body: "{\"error\":\"no such endpoint\"}".into(),
            })
        }
    }

    fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
        if url.ends_with("/api/tags") {
            let models: Vec<_> = self
                .models
                .values()
                .map(|m| serde_json::json!({ "name": m }))
                .collect();
            Ok(HttpResponse::ok(serde_json::json!({ "models": models }).to_string()))
        } else {
            Ok(HttpResponse {
                status: 404,
                body: String::new(),
            })
        }
    }
}

impl PowerSampler for MockBackend {
    fn sample(&self, at: Nanos) -> Option<PowerSample> {
        Some(PowerSample {
            at,
            watts: self.watts_at(at),
        })
    }

    fn retrospective(&self) -> bool {
        true
    }
}
