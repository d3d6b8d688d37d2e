use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use ecoroute_core::adapt::{AdaptConfig, SessionState};
use ecoroute_core::backend::{
    reference_model_names, specs_from_names, BackendError, MockBackend, ModelManager,
};
use ecoroute_core::cache::CacheConfig;
use ecoroute_core::eval::{generate_dataset, run_eval, EvalSetup};
use ecoroute_core::http::UreqTransport;
use ecoroute_core::pipeline::Pipeline;
use ecoroute_core::record::{read_log, EvalMode, JsonlWriter, LogRecord};
use ecoroute_core::router::{Router, RouterConfig};
use ecoroute_core::rules::RuleEngine;
use ecoroute_core::semantic::{EmbeddingProvider, HashEmbedder, TaskRegistry};
use ecoroute_core::telemetry::{Meter, TelemetryConfig};
use ecoroute_core::{Clock, ManualClock, ModelTier, QueryRecord, RoutingLevel};

fn strip_ts(mut r: Vec<LogRecord>) -> Vec<LogRecord> {
    for rec in &mut r {
        rec.ts.clear();
        rec.decision_latency_ns = 0;
        rec.latency_s = (rec.latency_s * 1e3).round();
    }
    r
}

fn mock_setup() -> (EvalSetup, Arc<MockBackend>) {
    let clock = Arc::new(ManualClock::new());
    let mock = Arc::new(MockBackend::reference(clock.clone()));
    (EvalSetup::with_mock(mock.clone(), clock), mock)
}

#[test]
fn eval_runs_are_reproducible() {
    let data = generate_dataset(3);
    let run = || {
        let (setup, _) = mock_setup();
        let base = run_eval(&setup, &data, EvalMode::Baseline, 1, None, None).unwrap();
        let adapt = run_eval(&setup, &data, EvalMode::Adaptive, 2, Some(&base.responses), None).unwrap();
        (strip_ts(base.records), strip_ts(adapt.records))
    };
    assert_eq!(run(), run());
}

#[test]
fn concurrent_eval_serves_every_item_on_the_same_tiers() {
    let data = generate_dataset(11);
    let (serial, _) = mock_setup();
    let (mut parallel, mock) = mock_setup();
    parallel.concurrency = 4;
    let a = run_eval(&serial, &data, EvalMode::Adaptive, 1, None, None).unwrap();
    let b = run_eval(&parallel, &data, EvalMode::Adaptive, 1, None, None).unwrap();
    assert_eq!(b.records.len(), data.len());
    let tiers = |r: &[LogRecord]| r.iter().map(|x| (x.item_id.clone(), x.tier)).collect::<Vec<_>>();
    assert_eq!(tiers(&a.records), tiers(&b.records));
    assert_eq!(mock.residency_violations(), 0);
}

#[test]
fn warm_cache_turns_later_repetitions_into_hits() {
    let data = generate_dataset(5);
    let (mut setup, mock) = mock_setup();
    setup.warm_cache = true;
    let run = run_eval(&setup, &data, EvalMode::Adaptive, 3, None, None).unwrap();
    assert_eq!(run.counters.l1_hits, 300);
    assert_eq!(mock.request_count(), 150);
    let hits: Vec<_> = run.records.iter().filter(|r| r.repetition != Some(0)).collect();
    assert!(hits.iter().all(|r| r.routing_level == RoutingLevel::L1Cache && r.energy_j == 0.0));
}

#[test]
fn backend_failure_aborts_with_partial_records() {
    let data = generate_dataset(1);
    let (setup, mock) = mock_setup();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("partial.jsonl");
    let sink = JsonlWriter::open(&path).unwrap();
    let first = run_eval(&setup, &data[..10], EvalMode::Baseline, 1, None, Some(&sink)).unwrap();
    assert!(first.aborted.is_none());
    mock.fail_next_requests(100);
    let run = run_eval(&setup, &data, EvalMode::Baseline, 2, None, Some(&sink)).unwrap();
    assert!(run.aborted.as_deref().is_some_and(|m| m.contains("unreachable")), "{:?}", run.aborted);
    assert!(run.records.is_empty());
    assert_eq!(sink.close().unwrap(), 10);
    assert_eq!(read_log(&path).unwrap().len(), 10);
}

#[test]
fn decision_only_cache_regenerates() {
    let clock = Arc::new(ManualClock::new());
    let dyn_clock: Arc<dyn Clock> = clock.clone();
    let mock = Arc::new(MockBackend::reference(dyn_clock.clone()));
    let provider: Arc<dyn EmbeddingProvider> = Arc::new(HashEmbedder::default());
    let registry = TaskRegistry::reference(provider.as_ref()).unwrap();
    let cache = CacheConfig {
        serve_responses: false,
        ..CacheConfig::default()
    };
    let router = Arc::new(Router::new(
        RouterConfig::default(),
        &cache,
        Arc::new(RuleEngine::reference()),
        Arc::new(registry),
        provider,
        reference_model_names(),
        dyn_clock.clone(),
    ));
    let meter = Arc::new(Meter::new(&TelemetryConfig::default(), Some(mock.clone()), dyn_clock.clone()));
    let pipeline = Pipeline::new(
        router,
        Arc::new(ModelManager::with_mock(mock.clone(), dyn_clock)),
        meter,
        AdaptConfig::default(),
    );
    let session = Mutex::new(SessionState::new("d"));
    let q = QueryRecord::new("1", "d", "explain how vaccines work", 0);
    let first = pipeline.process(&q, &session, |_| None).unwrap();
    let second = pipeline.process(&q, &session, |_| None).unwrap();
    assert_eq!(second.outcome.level, RoutingLevel::L1Cache);
    assert_eq!(second.outcome.tier, first.outcome.tier);
    assert!(!second.from_cache);
    assert_eq!(mock.request_count(), 2);
    assert!((second.telemetry.energy_joules - 75.0).abs() < 1e-9);
}

/// Minimal HTTP/1.1 server answering each request with a canned generate
/// response and recording the bodies it received.
fn stub_server(status: u16, body: &'static str) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut line = String::new();
            loop {
                line.clear();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut buf = vec![0; len];
            let _ = reader.read_exact(&mut buf);
            log.lock().unwrap().push(String::from_utf8_lossy(&buf).into_owned());
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    (format!("http://{addr}"), seen)
}

fn http_manager(url: String) -> ModelManager {
    let clock: Arc<dyn Clock> = Arc::new(ManualClock::new());
    ModelManager::new(
        url,
        Arc::new(UreqTransport::new(Duration::from_secs(5))),
        specs_from_names(&reference_model_names()),
        clock,
    )
    .unwrap()
}

#[test]
fn ollama_round_trip_over_http() {
    let (url, seen) = stub_server(
        200,
        r#"{"model":"gemma3:4b","response":"Tides follow the moon.","done":true,"eval_count":6,"eval_duration":1500000000,"total_duration":1900000000}"#,
    );
    let g = http_manager(url).generate(ModelTier::Medium, "explain tides").unwrap();
    assert_eq!(g.text, "Tides follow the moon.");
    assert_eq!(g.tokens_generated, 6);
    assert_eq!(g.generation_duration_ns, 1_500_000_000);
    let bodies = seen.lock().unwrap().clone();
    let v: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(v["model"], "gemma3:4b");
    assert_eq!(v["stream"], false);
    assert_eq!(v["keep_alive"], 0);
    assert_eq!(v["options"]["temperature"], 0.0);
}

#[test]
fn ollama_unknown_model_over_http() {
    let (url, _) = stub_server(404, r#"{"error":"model not found"}"#);
    let err = http_manager(url).generate(ModelTier::Small, "hi").unwrap_err();
    assert!(matches!(err, BackendError::UnknownModel(_)), "{err:?}");
}

#[test]
fn unreachable_backend_is_retriable_transport_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let err = http_manager(url).generate(ModelTier::Small, "hi").unwrap_err();
    assert!(err.is_retriable(), "{err:?}");
    assert!(matches!(err, BackendError::Transport { attempts: 3, .. }), "{err:?}");
}
