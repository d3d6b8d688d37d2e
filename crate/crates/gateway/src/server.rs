//! HTTP gateway: `POST /v1/query`, `GET /v1/metrics`, `GET /healthz`.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ecoroute_core::adapt::SessionStore;
use ecoroute_core::backend::BackendError;
use ecoroute_core::cache::CacheStats;
use ecoroute_core::pipeline::{Pipeline, Served};
use ecoroute_core::record::{query_digest, JsonlWriter, LogRecord};
use ecoroute_core::telemetry::joules_to_carbon;
use ecoroute_core::{Clock, ModelTier, QueryRecord, RoutingLevel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub session_id: String,
    pub prompt: String,
    /// Quality rating in [0, 1] recorded with this request's routing outcome.
    #[serde(default)]
    pub feedback: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub text: String,
    pub model: String,
    pub tier: ModelTier,
    pub routing_level: RoutingLevel,
    pub complexity_score: u8,
    pub confidence: f64,
    pub latency_ms: f64,
    pub energy_j: f64,
    pub carbon_g: f64,
}

impl QueryResponse {
    fn from_served(s: &Served) -> Self {
        Self {
            text: s.text.clone(),
            model: s.outcome.model_name.clone(),
            tier: s.outcome.tier,
            routing_level: s.outcome.level,
            complexity_score: s.outcome.score.value(),
            confidence: s.outcome.confidence,
            latency_ms: s.telemetry.latency_seconds * 1000.0,
            energy_j: s.telemetry.energy_joules,
            carbon_g: s.telemetry.carbon_grams,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub error: ErrorBody,
}

pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            kind: "bad_request",
            message: message.into(),
        }
    }

    fn backend(e: &BackendError) -> Self {
        Self {
            status: StatusCode::BAD_GATEWAY,
            kind: "backend_error",
            message: e.to_string(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            kind: "internal",
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorEnvelope {
            error: ErrorBody {
                kind: self.kind.to_string(),
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub requests: u64,
    pub errors: u64,
    pub cache: CacheStats,
    pub requests_by_tier: BTreeMap<ModelTier, u64>,
    pub requests_by_level: BTreeMap<RoutingLevel, u64>,
    pub energy_j: f64,
    pub carbon_g: f64,
    pub mean_latency_ms: f64,
}

#[derive(Debug, Default)]
struct Totals {
    requests: u64,
    errors: u64,
    by_tier: BTreeMap<ModelTier, u64>,
    by_level: BTreeMap<RoutingLevel, u64>,
    energy_j: f64,
    latency_s: f64,
}

pub struct AppState {
    pipeline: Pipeline,
    clock: Arc<dyn Clock>,
    sessions: SessionStore,
    log: Option<JsonlWriter>,
    totals: Mutex<Totals>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(pipeline: Pipeline, clock: Arc<dyn Clock>, log: Option<JsonlWriter>) -> Self {
        Self {
            pipeline,
            clock,
            sessions: SessionStore::new(),
            log,
            totals: Mutex::new(Totals::default()),
            next_id: AtomicU64::new(0),
        }
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn log(&self) -> Option<&JsonlWriter> {
        self.log.as_ref()
    }

    pub fn metrics(&self) -> MetricsSummary {
        let t = self.totals.lock().expect("totals lock");
        let mut by_tier: BTreeMap<ModelTier, u64> = ModelTier::ALL.iter().map(|t| (*t, 0)).collect();
        by_tier.extend(t.by_tier.iter().map(|(k, v)| (*k, *v)));
        MetricsSummary {
            requests: t.requests,
            errors: t.errors,
            cache: self.pipeline.router().cache().stats(),
            requests_by_tier: by_tier,
            requests_by_level: t.by_level.clone(),
            energy_j: t.energy_j,
            carbon_g: joules_to_carbon(t.energy_j, self.pipeline.meter().carbon()),
            mean_latency_ms: if t.requests == 0 {
                0.0
            } else {
                t.latency_s / t.requests as f64 * 1000.0
            },
        }
    }

    fn record_error(&self) {
        self.totals.lock().expect("totals lock").errors += 1;
    }

    /// Serves one query on the calling (blocking) thread.
    pub fn handle(&self, req: &QueryRequest) -> Result<QueryResponse, ApiError> {
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        let now = self.clock.now();
        let q = QueryRecord::new(format!("q{n}"), req.session_id.clone(), req.prompt.clone(), now);
        let session = self.sessions.get_or_create(&req.session_id);
        let feedback = req.feedback;
        let served = self.pipeline.process(&q, &session, |_| feedback).map_err(|e| {
            tracing::error!(session = %req.session_id, error = %e, "backend failure");
            self.record_error();
            ApiError::backend(&e)
        })?;

        let mut rec = LogRecord::from_served(&req.session_id, &served);
        rec.query_sha256 = Some(query_digest(&req.prompt));
        {
            // Counter and log line move together so they never disagree.
            let mut t = self.totals.lock().expect("totals lock");
            if let Some(log) = &self.log {
                if let Err(e) = log.append(&rec) {
                    tracing::error!(error = %e, "failed to append log record");
                }
            }
            t.requests += 1;
            *t.by_tier.entry(served.outcome.tier).or_default() += 1;
            *t.by_level.entry(served.outcome.level).or_default() += 1;
            t.energy_j += served.telemetry.energy_joules;
            t.latency_s += served.telemetry.latency_seconds;
        }
        tracing::info!(
            session = %req.session_id,
            level = %served.outcome.level.as_str(),
            tier = %served.outcome.tier,
            score = served.outcome.score.value(),
            "served"
        );
        Ok(QueryResponse::from_served(&served))
    }
}

async fn query(
    State(state): State<Arc<AppState>>,
    body: Result<Json<QueryRequest>, JsonRejection>,
) -> Result<Json<QueryResponse>, ApiError> {
    let Json(req) = body.map_err(|e| {
        tracing::warn!(error = %e.body_text(), "malformed query request");
        state.record_error();
        ApiError::bad_request(e.body_text())
    })?;
    if req.session_id.trim().is_empty() {
        state.record_error();
        return Err(ApiError::bad_request("session_id must not be empty"));
    }
    if let Some(f) = req.feedback {
        if !(0.0..=1.0).contains(&f) {
            state.record_error();
            return Err(ApiError::bad_request("feedback must be within [0, 1]"));
        }
    }
    let worker = state.clone();
    tokio::task::spawn_blocking(move || worker.handle(&req))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map(Json)
}

async fn metrics(State(state): State<Arc<AppState>>) -> Json<MetricsSummary> {
    Json(state.metrics())
}

async fn healthz(State(state): State<Arc<AppState>>) -> StatusCode {
    let backend = state.pipeline.backend().clone();
    match tokio::task::spawn_blocking(move || backend.health()).await {
        Ok(true) => StatusCode::OK,
        _ => StatusCode::SERVICE_UNAVAILABLE,
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/query", post(query))
        .route("/v1/metrics", get(metrics))
        .route("/healthz", get(healthz))
        .with_state(state)
}
