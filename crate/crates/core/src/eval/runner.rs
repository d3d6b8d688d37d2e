//! Baseline and adaptive evaluation passes over a dataset.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::dataset::DatasetItem;
use super::quality::quality_score;
use crate::adapt::{AdaptConfig, SessionState};
use crate::backend::{
    specs_from_names, BackendError, KeepAlive, MockBackend, ModelManager, ModelSpec, ResidencyState,
    RetryPolicy,
};
use crate::cache::CacheConfig;
use crate::clock::Clock;
use crate::domain::{ModelTier, QueryRecord};
use crate::http::HttpTransport;
use crate::pipeline::{Pipeline, Served};
use crate::record::{EvalMode, JsonlWriter, LogRecord};
use crate::router::{Router, RouterConfig, RouterCounters};
use crate::rules::RuleEngine;
use crate::semantic::{EmbeddingProvider, HashEmbedder, TaskRegistry};
use crate::telemetry::{Meter, PowerSampler, TelemetryConfig};

/// Everything an evaluation run needs. Routers and model managers are built
/// per run from these parts.
#[derive(Clone)]
pub struct EvalSetup {
    pub router: RouterConfig,
    pub cache: CacheConfig,
    pub adapt: AdaptConfig,
    pub rules: Arc<RuleEngine>,
    pub registry: Arc<TaskRegistry>,
    pub provider: Arc<dyn EmbeddingProvider>,
    /// Embedder for quality scoring.
    pub quality_provider: Arc<dyn EmbeddingProvider>,
    pub backend_url: String,
    pub transport: Arc<dyn HttpTransport>,
    pub models: Vec<ModelSpec>,
    pub retry: RetryPolicy,
    /// Keep the Large model loaded across baseline requests.
    pub keep_resident_baseline: bool,
    pub meter: Arc<Meter>,
    pub clock: Arc<dyn Clock>,
    /// Share one cache across repetitions instead of starting each cold.
    pub warm_cache: bool,
    /// Worker threads. Above 1, per-request energy is no longer exact.
    pub concurrency: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub mode: EvalMode,
    pub repetitions: u32,
    pub records: Vec<LogRecord>,
    /// Router counters summed over repetitions; all zero for the baseline.
    pub counters: RouterCounters,
    pub residency: ResidencyState,
    /// Set when the run stopped early; `records` holds what completed.
    pub aborted: Option<String>,
    /// Response text per item id from the first repetition.
    #[serde(skip)]
    pub responses: HashMap<String, String>,
}

impl EvalSetup {
    /// Reference rules, seed phrases and hash embedder, served by `mock`
    /// with the mock also acting as the power sampler.
    pub fn with_mock(mock: Arc<MockBackend>, clock: Arc<dyn Clock>) -> Self {
        let provider: Arc<dyn EmbeddingProvider> = Arc::new(HashEmbedder::default());
        let registry = TaskRegistry::reference(provider.as_ref()).expect("reference seeds embed");
        let sampler: Arc<dyn PowerSampler> = mock.clone();
        Self {
            router: RouterConfig::default(),
            cache: CacheConfig::default(),
            adapt: AdaptConfig::default(),
            rules: Arc::new(RuleEngine::reference()),
            registry: Arc::new(registry),
            provider: provider.clone(),
            quality_provider: provider,
            backend_url: "http://mock".into(),
            models: specs_from_names(mock.model_names()),
            transport: mock,
            retry: RetryPolicy::default(),
            keep_resident_baseline: true,
            meter: Arc::new(Meter::new(&TelemetryConfig::default(), Some(sampler), clock.clone())),
            clock,
            warm_cache: false,
            concurrency: 1,
        }
    }

    /// Model manager for `mode`; the baseline may keep the Large model loaded.
    pub fn manager(&self, mode: EvalMode) -> Result<Arc<ModelManager>, BackendError> {
        let keep = match mode {
            EvalMode::Baseline if self.keep_resident_baseline => KeepAlive::Resident,
            _ => KeepAlive::Release,
        };
        Ok(Arc::new(
            ModelManager::new(
                self.backend_url.clone(),
                self.transport.clone(),
                self.models.clone(),
                self.clock.clone(),
            )?
            .with_keep_alive(keep)
            .with_retry(self.retry),
        ))
    }

    pub fn new_router(&self) -> Arc<Router> {
        let names: BTreeMap<ModelTier, String> = self
            .models
            .iter()
            .map(|s| (s.tier, s.model_name.clone()))
            .collect();
        Arc::new(Router::new(
            self.router.clone(),
            &self.cache,
            self.rules.clone(),
            self.registry.clone(),
            self.provider.clone(),
            names,
            self.clock.clone(),
        ))
    }
}

fn add_counters(a: RouterCounters, b: RouterCounters) -> RouterCounters {
    RouterCounters {
        routed: a.routed + b.routed,
        l1_hits: a.l1_hits + b.l1_hits,
        l2_invocations: a.l2_invocations + b.l2_invocations,
        l3_invocations: a.l3_invocations + b.l3_invocations,
        l3_provider_failures: a.l3_provider_failures + b.l3_provider_failures,
    }
}

/// Runs `repetitions` passes over `dataset`. Baseline passes force the Large
/// tier; adaptive passes use the full waterfall with one session per pass.
/// In adaptive mode each response is scored against `references` (or the
/// item's own reference) and the score feeds session adaptation.
pub fn run_eval(
    setup: &EvalSetup,
    dataset: &[DatasetItem],
    mode: EvalMode,
    repetitions: u32,
    references: Option<&HashMap<String, String>>,
    sink: Option<&JsonlWriter>,
) -> Result<EvalRun, BackendError> {
    let backend = setup.manager(mode)?;
    let mut run = EvalRun {
        mode,
        repetitions,
        records: Vec::with_capacity(dataset.len() * repetitions as usize),
        counters: RouterCounters::default(),
        residency: ResidencyState::default(),
        aborted: None,
        responses: HashMap::new(),
    };
    let shared_router = setup.warm_cache.then(|| setup.new_router());

    for rep in 0..repetitions {
        let router = shared_router.clone().unwrap_or_else(|| setup.new_router());
        let before = router.counters();
        let pipeline = Pipeline::new(router.clone(), backend.clone(), setup.meter.clone(), setup.adapt);
        let session_id = format!("eval-{mode}-r{rep}");
        let session = Mutex::new(SessionState::new(session_id.clone()));

        let serve = |item: &DatasetItem| -> Result<Served, BackendError> {
            let q = QueryRecord::new(item.id.clone(), session_id.clone(), item.text.clone(), setup.clock.now());
            match mode {
                EvalMode::Baseline => pipeline.process_forced(&q, ModelTier::Large),
                EvalMode::Adaptive => {
                    let reference = item
                        .reference
                        .as_deref()
                        .or_else(|| references.and_then(|r| r.get(&item.id)).map(String::as_str));
                    pipeline.process(&q, &session, |text| {
                        reference.and_then(|r| quality_score(text, r, setup.quality_provider.as_ref()).ok())
                    })
                }
            }
        };

        let (results, err) = if setup.concurrency <= 1 {
            let mut out = Vec::new();
            let mut err = None;
            for item in dataset {
                match serve(item) {
                    Ok(s) => out.push((item, s)),
                    Err(e) => {
                        err = Some(e);
                        break;
                    }
                }
            }
            (out, err)
        } else {
            serve_concurrently(dataset, setup.concurrency, &serve)
        };

        for (item, served) in results {
            let mut rec = LogRecord::from_served(&session_id, &served);
            rec.item_id = Some(item.id.clone());
            rec.label = Some(item.label);
            rec.mode = Some(mode);
            rec.repetition = Some(rep);
            if let Some(sink) = sink {
                if let Err(e) = sink.append(&rec) {
                    tracing::error!(error = %e, "failed to append eval record");
                }
            }
            if rep == 0 {
                run.responses.insert(item.id.clone(), served.text);
            }
            run.records.push(rec);
        }

        let after = router.counters();
        run.counters = add_counters(
            run.counters,
            RouterCounters {
                routed: after.routed - before.routed,
                l1_hits: after.l1_hits - before.l1_hits,
                l2_invocations: after.l2_invocations - before.l2_invocations,
                l3_invocations: after.l3_invocations - before.l3_invocations,
                l3_provider_failures: after.l3_provider_failures - before.l3_provider_failures,
            },
        );

        if let Some(e) = err {
            tracing::error!(%mode, repetition = rep, error = %e, "evaluation aborted");
            run.aborted = Some(e.to_string());
            break;
        }
    }
    if let Some(sink) = sink {
        let _ = sink.flush();
    }
    run.residency = backend.residency();
    Ok(run)
}

/// Work-queue fan-out preserving dataset order in the result. Stops handing
/// out items after the first failure.
fn serve_concurrently<'a, F>(
    dataset: &'a [DatasetItem],
    workers: usize,
    serve: &F,
) -> (Vec<(&'a DatasetItem, Served)>, Option<BackendError>)
where
    F: Fn(&DatasetItem) -> Result<Served, BackendError> + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Served>>> = Mutex::new(vec![None; dataset.len()]);
    let first_err: Mutex<Option<BackendError>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if first_err.lock().expect("error lock").is_some() {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = dataset.get(i) else { break };
                match serve(item) {
                    Ok(served) => slots.lock().expect("slot lock")[i] = Some(served),
                    Err(e) => {
                        first_err.lock().expect("error lock").get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });
    let results = slots
        .into_inner()
        .expect("slot lock")
        .into_iter()
        .zip(dataset)
        .filter_map(|(s, item)| s.map(|s| (item, s)))
        .collect();
    (results, first_err.into_inner().expect("error lock"))
}
