//! Builds the core components described by a [`ConfigRoot`].

use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use ecoroute_core::backend::{specs_from_names, MockBackend};
use ecoroute_core::eval::EvalSetup;
use ecoroute_core::http::{HttpTransport, UreqTransport};
use ecoroute_core::rules::{load_rules_file, RuleEngine};
use ecoroute_core::semantic::{build_task_vectors, EmbeddingProvider, HashEmbedder, SeedSets, TaskRegistry};
use ecoroute_core::telemetry::{CommandSampler, Meter, PowerSampler, SamplerKind};
use ecoroute_core::Clock;

use crate::config::{BackendKind, ConfigRoot};

/// Components plus the mock, when the mock is the backend.
pub struct Assembled {
    pub setup: EvalSetup,
    pub mock: Option<Arc<MockBackend>>,
}

pub fn assemble(cfg: &ConfigRoot, clock: Arc<dyn Clock>) -> anyhow::Result<Assembled> {
    let rules = match &cfg.rules_path {
        Some(p) => load_rules_file(p).with_context(|| format!("loading rules_path {}", p.display()))?,
        None => RuleEngine::reference(),
    };
    let provider: Arc<dyn EmbeddingProvider> = Arc::new(HashEmbedder::default());
    let registry = match &cfg.seeds_path {
        Some(p) => {
            let seeds = SeedSets::load(p).with_context(|| format!("loading seeds_path {}", p.display()))?;
            build_task_vectors(provider.as_ref(), &seeds).context("building task vectors")?
        }
        None => TaskRegistry::reference(provider.as_ref()).context("building task vectors")?,
    };

    let b = &cfg.backend;
    let (transport, mock, base_url): (Arc<dyn HttpTransport>, _, _) = match b.kind {
        BackendKind::Mock => {
            let mock = Arc::new(MockBackend::new(b.models.clone(), &b.mock, clock.clone()));
            (mock.clone(), Some(mock), "http://mock".to_string())
        }
        BackendKind::Ollama => (
            Arc::new(UreqTransport::new(Duration::from_secs(b.request_timeout_s))),
            None,
            b.base_url.clone(),
        ),
    };

    let sampler: Option<Arc<dyn PowerSampler>> = match cfg.telemetry.sampler {
        SamplerKind::None => None,
        SamplerKind::Mock => match &mock {
            Some(m) => Some(m.clone()),
            None => {
                tracing::warn!("telemetry.sampler = \"mock\" without the mock backend; energy uses nominal watts");
                None
            }
        },
        SamplerKind::Command => {
            let cmd = cfg.telemetry.command.as_deref().unwrap_or_default();
            let s = CommandSampler::spawn(cmd).with_context(|| format!("starting telemetry.command `{cmd}`"))?;
            Some(Arc::new(s))
        }
    };

    let setup = EvalSetup {
        router: cfg.router.clone(),
        cache: cfg.cache,
        adapt: cfg.adapt,
        rules: Arc::new(rules),
        registry: Arc::new(registry),
        provider: provider.clone(),
        quality_provider: provider,
        backend_url: base_url,
        transport,
        models: specs_from_names(&b.models),
        retry: b.retry(),
        keep_resident_baseline: b.keep_resident_baseline,
        meter: Arc::new(Meter::new(&cfg.telemetry, sampler, clock.clone())),
        clock,
        warm_cache: false,
        concurrency: 1,
    };
    Ok(Assembled { setup, mock })
}
