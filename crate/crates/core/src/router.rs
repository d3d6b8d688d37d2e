//! The routing waterfall: cache, then rules, then embeddings.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adapt::SessionState;
use crate::cache::{CacheConfig, CachedRoute, RoutingCache, TtlCache};
use crate::clock::Clock;
use crate::domain::{
    normalize_query_text, tier_for_score, CategoryHint, ModelTier, QueryRecord, RoutingLevel,
    RoutingOutcome, TierThresholds,
};
use crate::rules::{needs_escalation, RuleEngine};
use crate::semantic::{band_midpoint, EmbeddingProvider, TaskRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RouterConfig {
    pub thresholds: TierThresholds,
    pub escalation_threshold: f64,
    pub semantic_fallback_tier: ModelTier,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            thresholds: TierThresholds::default(),
            escalation_threshold: 0.6,
            semantic_fallback_tier: ModelTier::Large,
        }
    }
}

impl RouterConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.escalation_threshold) {
            return Err("router.escalation_threshold must be within [0, 1]".into());
        }
        Ok(())
    }
}

/// Per-level invocation counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouterCounters {
    pub routed: u64,
    pub l1_hits: u64,
    pub l2_invocations: u64,
    pub l3_invocations: u64,
    pub l3_provider_failures: u64,
}

#[derive(Default)]
struct AtomicCounters {
    routed: AtomicU64,
    l1_hits: AtomicU64,
    l2: AtomicU64,
    l3: AtomicU64,
    l3_failures: AtomicU64,
}

/// A routing decision plus what the caller needs to finish the request.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteDecision {
    pub outcome: RoutingOutcome,
    /// Normalized query text, used as the cache key.
    pub key: String,
    /// Present on an L1 hit when the cache holds the response.
    pub cached_response: Option<String>,
}

/// Base thresholds shifted by the session's accumulated adjustment.
pub fn effective_thresholds(session: &SessionState, base: &TierThresholds) -> TierThresholds {
    session.adjustment.apply(base)
}

pub struct Router {
    config: RouterConfig,
    serve_cached_responses: bool,
    rules: Arc<RuleEngine>,
    registry: Arc<TaskRegistry>,
    provider: Arc<dyn EmbeddingProvider>,
    model_names: BTreeMap<ModelTier, String>,
    cache: RoutingCache,
    clock: Arc<dyn Clock>,
    counters: AtomicCounters,
}

impl Router {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        config: RouterConfig,
        cache: &CacheConfig,
        rules: Arc<RuleEngine>,
        registry: Arc<TaskRegistry>,
        provider: Arc<dyn EmbeddingProvider>,
        model_names: BTreeMap<ModelTier, String>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Self {
            config,
            serve_cached_responses: cache.serve_responses,
            rules,
            registry,
            provider,
            model_names,
            cache: TtlCache::from_config(cache),
            clock,
            counters: AtomicCounters::default(),
        }
    }

    pub fn config(&self) -> &RouterConfig {
        &self.config
    }

    /// Whether cache hits replay the stored response.
    pub fn cache_responses(&self) -> bool {
        self.serve_cached_responses
    }

    pub fn cache(&self) -> &RoutingCache {
        &self.cache
    }

    pub fn rules(&self) -> &RuleEngine {
        &self.rules
    }

    pub fn registry(&self) -> &TaskRegistry {
        &self.registry
    }

    pub fn provider(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.provider
    }

    pub fn model_name(&self, tier: ModelTier) -> String {
        self.model_names
            .get(&tier)
            .cloned()
            .unwrap_or_else(|| tier.as_str().to_string())
    }

    pub fn counters(&self) -> RouterCounters {
        let c = &self.counters;
        RouterCounters {
            routed: c.routed.load(Ordering::Relaxed),
            l1_hits: c.l1_hits.load(Ordering::Relaxed),
            l2_invocations: c.l2.load(Ordering::Relaxed),
            l3_invocations: c.l3.load(Ordering::Relaxed),
            l3_provider_failures: c.l3_failures.load(Ordering::Relaxed),
        }
    }

    /// Runs the waterfall for one query. The cache is not written here; call
    /// [`Router::remember`] once the backend has produced a response.
    pub fn route(&self, query: &QueryRecord, session: &SessionState) -> RouteDecision {
        self.counters.routed.fetch_add(1, Ordering::Relaxed);
        let key = normalize_query_text(&query.text);

        let t0 = self.clock.now();
        if let Some(hit) = self.cache.get(&key, t0) {
            self.counters.l1_hits.fetch_add(1, Ordering::Relaxed);
            let CachedRoute {
                mut outcome,
                response_text,
            } = hit.value;
            outcome.level = RoutingLevel::L1Cache;
            outcome.decision_latency_ns = self.clock.now().saturating_sub(t0);
            let cached_response = if self.serve_cached_responses {
                response_text
            } else {
                None
            };
            return RouteDecision {
                outcome,
                key,
                cached_response,
            };
        }

        let thresholds = effective_thresholds(session, &self.config.thresholds);

        self.counters.l2.fetch_add(1, Ordering::Relaxed);
        let verdict = self.rules.classify(&key);
        if !needs_escalation(&verdict, self.config.escalation_threshold) {
            let tier = tier_for_score(verdict.score, &thresholds);
            let outcome = RoutingOutcome {
                level: RoutingLevel::L2Rules,
                score: verdict.score,
                confidence: verdict.confidence,
                tier,
                model_name: self.model_name(tier),
                decision_latency_ns: self.clock.now().saturating_sub(t0),
                category_hint: verdict.category_hint.map(CategoryHint::Rule),
            };
            return RouteDecision {
                outcome,
                key,
                cached_response: None,
            };
        }

        self.counters.l3.fetch_add(1, Ordering::Relaxed);
        let outcome = match self.registry_verdict(&key) {
            Some(v) => {
                let tier = tier_for_score(v.score, &thresholds);
                RoutingOutcome {
                    level: RoutingLevel::L3Semantic,
                    score: v.score,
                    confidence: v.confidence,
                    tier,
                    model_name: self.model_name(tier),
                    decision_latency_ns: self.clock.now().saturating_sub(t0),
                    category_hint: Some(CategoryHint::Semantic(v.category)),
                }
            }
            None => {
                self.counters.l3_failures.fetch_add(1, Ordering::Relaxed);
                let tier = self.config.semantic_fallback_tier;
                RoutingOutcome {
                    level: RoutingLevel::L3Semantic,
                    score: band_midpoint(tier.complexity()),
                    confidence: 0.0,
                    tier,
                    model_name: self.model_name(tier),
                    decision_latency_ns: self.clock.now().saturating_sub(t0),
                    category_hint: None,
                }
            }
        };
        RouteDecision {
            outcome,
            key,
            cached_response: None,
        }
    }

    fn registry_verdict(&self, key: &str) -> Option<crate::semantic::SemanticVerdict> {
        match crate::semantic::classify_semantic(&self.registry, self.provider.as_ref(), key) {
            Ok(v) => Some(v),
            Err(e) => {
                tracing::warn!(error = %e, "semantic classifier failed, using fallback tier");
                None
            }
        }
    }

    /// Stores a completed decision (and optionally its response) for replay.
    pub fn remember(&self, key: &str, outcome: &RoutingOutcome, response_text: Option<String>) {
        if outcome.level == RoutingLevel::L1Cache {
            return;
        }
        self.cache.put(
            key,
            CachedRoute {
                outcome: outcome.clone(),
                response_text,
            },
            self.clock.now(),
        );
    }
}
