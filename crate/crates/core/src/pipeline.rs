//! One request end to end: route, generate, measure, adapt, cache.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::adapt::{observe, AdaptConfig, MisrouteSignal, SessionState, ThresholdAdjustment};
use crate::backend::{BackendError, ModelManager};
use crate::domain::{ModelTier, QueryRecord, RoutingLevel, RoutingOutcome};
use crate::router::Router;
use crate::telemetry::{Meter, TelemetryRecord};

/// Everything known about a served request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Served {
    pub outcome: RoutingOutcome,
    pub text: String,
    pub telemetry: TelemetryRecord,
    /// Response replayed from the cache without calling the backend.
    pub from_cache: bool,
    pub quality_signal: Option<f64>,
    /// Session deltas after this request was observed.
    pub adjustment: ThresholdAdjustment,
    pub signal: Option<MisrouteSignal>,
}

#[derive(Clone)]
pub struct Pipeline {
    router: Arc<Router>,
    backend: Arc<ModelManager>,
    meter: Arc<Meter>,
    adapt: AdaptConfig,
}

impl Pipeline {
    pub fn new(router: Arc<Router>, backend: Arc<ModelManager>, meter: Arc<Meter>, adapt: AdaptConfig) -> Self {
        Self {
            router,
            backend,
            meter,
            adapt,
        }
    }

    pub fn router(&self) -> &Arc<Router> {
        &self.router
    }

    pub fn backend(&self) -> &Arc<ModelManager> {
        &self.backend
    }

    pub fn meter(&self) -> &Arc<Meter> {
        &self.meter
    }

    /// Routes and serves `query`. `quality` receives the response text and
    /// returns the quality signal for the adaptation step, if any.
    pub fn process(
        &self,
        query: &QueryRecord,
        session: &Mutex<SessionState>,
        quality: impl FnOnce(&str) -> Option<f64>,
    ) -> Result<Served, BackendError> {
        let decision = {
            let s = session.lock().expect("session lock");
            self.router.route(query, &s)
        };
        let outcome = decision.outcome;

        let (text, telemetry, from_cache) = match decision.cached_response {
            Some(text) => (text, self.meter.cached(outcome.decision_latency_ns), true),
            None => {
                let gen = self.backend.generate(outcome.tier, &query.text)?;
                let t = self.meter.measure(&gen, outcome.decision_latency_ns);
                (gen.text, t, false)
            }
        };

        let quality_signal = quality(&text);
        let (adjustment, signal) = {
            let mut s = session.lock().expect("session lock");
            let signal = observe(&mut s, &outcome, quality_signal, &self.adapt);
            (s.adjustment, signal)
        };
        if let Some(sig) = signal {
            tracing::info!(session = %query.session_id, ?sig, ?adjustment, "threshold adjustment");
        }

        if !from_cache {
            let cached_text = self.router.cache_responses().then(|| text.clone());
            self.router.remember(&decision.key, &outcome, cached_text);
        }

        Ok(Served {
            outcome,
            text,
            telemetry,
            from_cache,
            quality_signal,
            adjustment,
            signal,
        })
    }

    /// Serves `query` on a fixed tier without consulting the router.
    pub fn process_forced(&self, query: &QueryRecord, tier: ModelTier) -> Result<Served, BackendError> {
        let gen = self.backend.generate(tier, &query.text)?;
        let telemetry = self.meter.measure(&gen, 0);
        let outcome = RoutingOutcome {
            level: RoutingLevel::Forced,
            score: crate::semantic::band_midpoint(tier.complexity()),
            confidence: 1.0,
            tier,
            model_name: gen.model_name.clone(),
            decision_latency_ns: 0,
            category_hint: None,
        };
        Ok(Served {
            outcome,
            text: gen.text,
            telemetry,
            from_cache: false,
            quality_signal: None,
            adjustment: ThresholdAdjustment::default(),
            signal: None,
        })
    }
}
