//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use ecoroute_core::adapt::{
    adjust_thresholds, observe, AdaptConfig, Boundary, Direction, MisrouteSignal, SessionState,
};
use ecoroute_core::backend::{
    reference_model_names, GenerationResult, MockBackend, MockConfig, ModelManager,
    ResidencyEventKind,
};
use ecoroute_core::cache::TtlCache;
use ecoroute_core::clock::{secs_to_nanos, Nanos};
use ecoroute_core::eval::{
    generate_dataset, greedy_f1, metrics_from_confusion, quality_score, routing_metrics,
    run_eval, ConfusionMatrix, EvalSetup,
};
use ecoroute_core::eval::report::{build_report, emit_report};
use ecoroute_core::pipeline::Pipeline;
use ecoroute_core::record::{EvalMode, LogRecord};
use ecoroute_core::router::{effective_thresholds, Router, RouterConfig};
use ecoroute_core::rules::{load_rules_file, REFERENCE_RULES};
use ecoroute_core::semantic::{
    build_task_vectors, EmbeddingProvider, EmbeddingVector, HashEmbedder, SeedSets,
    SemanticError, REFERENCE_SEEDS,
};
use ecoroute_core::telemetry::{
    integrate_energy, joules_to_carbon, CarbonConfig, Meter, PowerSample, PowerSampler,
    TelemetryConfig,
};
use ecoroute_core::{
    normalize_query_text, Clock, Complexity, ManualClock, ModelTier, QueryRecord, RoutingLevel,
    SystemClock, TierThresholds,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn within_rel(actual: f64, expected: f64, rel: f64) -> bool {
    (actual - expected).abs() <= rel * expected.abs()
}

// ---------------------------------------------------------------- 1

fn carbon_arithmetic() -> Outcome {
    let c = CarbonConfig::default();
    let a = joules_to_carbon(84_200.0, &c);
    let b = joules_to_carbon(22_000.0, &c);
    ensure!((a - 11.11).abs() <= 0.05, "84.2 kJ -> {a} g");
    ensure!((b - 2.90).abs() <= 0.02, "22.0 kJ -> {b} g");
    ensure!(joules_to_carbon(0.0, &c) == 0.0, "0 J is not 0 g");
    Ok(format!("84200 J -> {a:.4} g, 22000 J -> {b:.4} g"))
}

// ---------------------------------------------------------------- 2, 3, 11

struct MockRun {
    baseline: Vec<LogRecord>,
    adaptive: Vec<LogRecord>,
    wall: Duration,
}

const REPS: u32 = 3;

fn mock_run() -> Result<MockRun, String> {
    let start = Instant::now();
    let clock = Arc::new(ManualClock::new());
    let mock = Arc::new(MockBackend::reference(clock.clone()));
    if mock.time_scale() != 0.01 {
        return Err("reference mock time scale is not 0.01".into());
    }
    let setup = EvalSetup::with_mock(mock, clock);
    let data = generate_dataset(42);
    let base = run_eval(&setup, &data, EvalMode::Baseline, REPS, None, None).map_err(|e| e.to_string())?;
    let adapt = run_eval(&setup, &data, EvalMode::Adaptive, REPS, Some(&base.responses), None)
        .map_err(|e| e.to_string())?;
    if base.aborted.is_some() || adapt.aborted.is_some() {
        return Err(format!("run aborted: {:?} {:?}", base.aborted, adapt.aborted));
    }
    Ok(MockRun {
        baseline: base.records,
        adaptive: adapt.records,
        wall: start.elapsed(),
    })
}

/// Closed form: watts × seconds × count, per repetition.
fn oracle_energy_kj(counts: [u64; 3]) -> f64 {
    let per_query = [10.0 * 0.3, 25.0 * 3.0, 40.0 * 13.8];
    counts.iter().zip(per_query).map(|(n, j)| *n as f64 * j).sum::<f64>() / 1000.0
}

fn per_rep_energy_kj(records: &[LogRecord]) -> Vec<f64> {
    let mut totals = vec![0.0; REPS as usize];
    for r in records {
        totals[r.repetition.unwrap_or(0) as usize] += r.energy_j / 1000.0;
    }
    totals
}

fn mock_energy(run: &MockRun) -> Outcome {
    let expected_base = oracle_energy_kj([0, 0, 150]);
    let expected_adapt = oracle_energy_kj([50, 50, 50]);
    ensure!((expected_base - 82.8).abs() < 1e-9, "oracle baseline {expected_base}");
    ensure!((expected_adapt - 31.5).abs() < 1e-9, "oracle adaptive {expected_adapt}");
    ensure!(run.baseline.len() == 450 && run.adaptive.len() == 450, "record counts");
    ensure!(
        run.baseline.iter().chain(&run.adaptive).all(|r| !r.energy_fallback),
        "some records fell back to nominal power"
    );
    ensure!(run.baseline.iter().all(|r| r.tier == ModelTier::Large), "baseline used a non-Large tier");
    let b = per_rep_energy_kj(&run.baseline);
    let a = per_rep_energy_kj(&run.adaptive);
    for (i, (bt, at)) in b.iter().zip(&a).enumerate() {
        ensure!(within_rel(*bt, 82.8, 0.01), "rep {i}: baseline {bt:.4} kJ");
        ensure!(within_rel(*at, 31.5, 0.02), "rep {i}: adaptive {at:.4} kJ");
    }
    let bm = b.iter().sum::<f64>() / b.len() as f64;
    let am = a.iter().sum::<f64>() / a.len() as f64;
    let red = (bm - am) / bm * 100.0;
    ensure!((red - 61.96).abs() <= 2.0, "reduction {red:.3}%");
    ensure!(run.wall < Duration::from_secs(60), "took {:?}", run.wall);
    Ok(format!("baseline {bm:.3} kJ, adaptive {am:.3} kJ, reduction {red:.2}% ({:?})", run.wall))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn mock_latency(run: &MockRun) -> Outcome {
    let b = mean(run.baseline.iter().map(|r| r.latency_s));
    ensure!((b - 13.8).abs() < 1e-9, "baseline mean latency {b}");
    let a = mean(run.adaptive.iter().map(|r| r.latency_s));
    ensure!(within_rel(a, 5.7, 0.02), "adaptive mean latency {a}");
    for (label, expect) in [(Complexity::Simple, 0.3), (Complexity::Medium, 3.0), (Complexity::Complex, 13.8)] {
        let m = mean(run.adaptive.iter().filter(|r| r.label == Some(label)).map(|r| r.latency_s));
        ensure!((m - expect).abs() < 1e-9, "{label} mean latency {m}");
    }
    let red = (b - a) / b * 100.0;
    ensure!((red - 58.7).abs() <= 2.0, "reduction {red:.3}%");
    Ok(format!("baseline {b:.3} s, adaptive {a:.4} s, simple 0.300 s, reduction {red:.2}%"))
}

fn report_integrity(run: &MockRun) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("report.json");
    let all: Vec<LogRecord> = run.baseline.iter().chain(&run.adaptive).cloned().collect();
    let report = emit_report(&all, &out).map_err(|e| e.to_string())?;
    ensure!(out.exists() && out.with_extension("txt").exists(), "report files missing");
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;

    let red = report.reductions.ok_or("reductions missing")?;
    let hand = |f: fn(&LogRecord) -> f64, per_query_mean: bool| {
        let t = |rs: &[LogRecord]| {
            let mut per = vec![(0.0, 0usize); REPS as usize];
            for r in rs {
                let e = &mut per[r.repetition.unwrap_or(0) as usize];
                e.0 += f(r);
                e.1 += 1;
            }
            let vals: Vec<f64> = per
                .iter()
                .map(|(s, n)| if per_query_mean { s / *n as f64 } else { *s })
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        let (b, a) = (t(&run.baseline), t(&run.adaptive));
        (b - a) / b * 100.0
    };
    let energy = hand(|r| r.energy_j / 1000.0, false);
    let latency = hand(|r| r.latency_s, true);
    let carbon = hand(|r| r.carbon_g, false);
    ensure!(within_rel(red.energy_pct, energy, 1e-9), "energy {} vs {energy}", red.energy_pct);
    ensure!(within_rel(red.latency_pct, latency, 1e-9), "latency {} vs {latency}", red.latency_pct);
    ensure!(within_rel(red.carbon_pct, carbon, 1e-9), "carbon {} vs {carbon}", red.carbon_pct);

    let rf = &parsed["reference_figures"];
    ensure!(rf["stated_energy_reduction_pct"] == 67.5, "stated energy figure missing");
    ensure!(rf["stated_latency_reduction_pct"] == 68.0, "stated latency figure missing");
    let raw = rf["raw_ratio_energy_reduction_pct"].as_f64().unwrap_or(0.0);
    ensure!((raw - 73.87).abs() < 0.01, "raw-ratio energy {raw}");
    ensure!(rf["note"].as_str().is_some_and(|n| n.contains("67.5%") && n.contains("68%")), "note missing");

    let single = build_report(&run.baseline);
    ensure!(single.reductions.is_none() && !single.notices.is_empty(), "single-mode report should omit reductions");
    Ok(format!(
        "energy {:.4}%, latency {:.4}%, carbon {:.4}% from raw totals; reference note present",
        red.energy_pct, red.latency_pct, red.carbon_pct
    ))
}

// ---------------------------------------------------------------- 4

fn brute_force(pairs: &[(Complexity, ModelTier)]) -> (f64, BTreeMap<Complexity, (f64, f64, f64)>, f64) {
    let mut per = BTreeMap::new();
    let mut weighted = 0.0;
    let correct = pairs.iter().filter(|(l, t)| t.complexity() == *l).count();
    for c in Complexity::ALL {
        let (mut tp, mut fp, mut fnn) = (0u64, 0u64, 0u64);
        for (l, t) in pairs {
            let pred = t.complexity();
            match (*l == c, pred == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fnn += 1,
                _ => {}
            }
        }
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fnn == 0 { 0.0 } else { tp as f64 / (tp + fnn) as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        weighted += (tp + fnn) as f64 * f;
        per.insert(c, (p, r, f));
    }
    let n = pairs.len() as f64;
    (correct as f64 / n, per, weighted / n)
}

fn routing_metrics_oracle() -> Outcome {
    let m = metrics_from_confusion(&ConfusionMatrix::from_counts([[49, 1, 0], [5, 40, 5], [0, 24, 26]]));
    let rs = m.per_class[&Complexity::Simple].recall;
    let rc = m.per_class[&Complexity::Complex].recall;
    ensure!(rs == 0.98, "recall(simple) {rs}");
    ensure!(rc == 0.52, "recall(complex) {rc}");
    ensure!((m.per_class[&Complexity::Complex].precision - 26.0 / 31.0).abs() < 1e-12, "precision(complex)");

    let tiers = [ModelTier::Small, ModelTier::Medium, ModelTier::Large];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut logs = 0;
    for n in [1usize, 2, 10, 150, 1000, 10_000] {
        for _ in 0..5 {
            let pairs: Vec<_> = (0..n)
                .map(|_| (Complexity::ALL[rng.random_range(0..3)], tiers[rng.random_range(0..3)]))
                .collect();
            let got = routing_metrics(pairs.iter().copied());
            let (acc, per, wf1) = brute_force(&pairs);
            ensure!((got.accuracy - acc).abs() <= 1e-12, "accuracy n={n}");
            ensure!((got.weighted_f1 - wf1).abs() <= 1e-12, "weighted f1 n={n}");
            for (c, (p, r, f)) in per {
                let g = got.per_class[&c];
                ensure!(
                    (g.precision - p).abs() <= 1e-12 && (g.recall - r).abs() <= 1e-12 && (g.f1 - f).abs() <= 1e-12,
                    "class {c} n={n}"
                );
            }
            let weights: f64 = got.per_class.values().map(|c| c.support as f64).sum::<f64>() / n as f64;
            ensure!((weights - 1.0).abs() < 1e-12, "weights sum {weights}");
            logs += 1;
        }
    }
    Ok(format!("recall simple {rs}, complex {rc}; {logs} random logs match brute force"))
}

// ---------------------------------------------------------------- 5

/// Straightforward reference: a recency-ordered vector.
struct RefCache {
    cap: usize,
    ttl: Nanos,
    entries: Vec<(String, u32, Nanos)>,
}

impl RefCache {
    fn get(&mut self, k: &str, now: Nanos) -> Option<u32> {
        let i = self.entries.iter().position(|e| e.0 == k)?;
        if now - self.entries[i].2 > self.ttl {
            self.entries.remove(i);
            return None;
        }
        let e = self.entries.remove(i);
        let v = e.1;
        self.entries.insert(0, e);
        Some(v)
    }

    fn put(&mut self, k: &str, v: u32, now: Nanos) {
        self.entries.retain(|e| e.0 != k);
        let ttl = self.ttl;
        self.entries.retain(|e| now - e.2 <= ttl);
        if self.entries.len() >= self.cap {
            self.entries.pop();
        }
        self.entries.insert(0, (k.to_string(), v, now));
    }
}

fn cache_behavior() -> Outcome {
    let clock = Arc::new(ManualClock::new());
    let mock = Arc::new(MockBackend::reference(clock.clone()));
    let setup = EvalSetup::with_mock(mock.clone(), clock.clone());
    let router = Arc::new(Router::new(
        RouterConfig::default(),
        &setup.cache,
        setup.rules.clone(),
        setup.registry.clone(),
        setup.provider.clone(),
        reference_model_names(),
        clock.clone(),
    ));
    let backend = Arc::new(ModelManager::with_mock(mock.clone(), clock.clone()));
    let pipeline = Pipeline::new(router.clone(), backend, setup.meter.clone(), AdaptConfig::default());
    let session = Mutex::new(SessionState::new("cache"));
    let q = QueryRecord::new("q", "cache", "What is the capital of France?", 0);
    for _ in 0..10 {
        pipeline.process(&q, &session, |_| None).map_err(|e| e.to_string())?;
    }
    let calls = mock.request_count();
    let hits = router.counters().l1_hits;
    ensure!(calls == 1 && hits == 9, "{calls} backend calls, {hits} L1 hits");
    clock.advance_secs(301.0);
    let s = pipeline.process(&q, &session, |_| None).map_err(|e| e.to_string())?;
    ensure!(mock.request_count() == 2 && s.outcome.level != RoutingLevel::L1Cache, "no fresh call after TTL");

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ops = 0usize;
    for _ in 0..1000 {
        let cap = rng.random_range(1..6);
        let ttl = rng.random_range(1..50u64);
        let cache = TtlCache::<u32>::new(cap, ttl as f64 / 1e9);
        let mut reference = RefCache {
            cap,
            ttl: secs_to_nanos(ttl as f64 / 1e9),
            entries: Vec::new(),
        };
        let mut now = 0u64;
        for _ in 0..rng.random_range(1..60) {
            now += rng.random_range(0..10u64);
            let k = format!("k{}", rng.random_range(0..8));
            if rng.random_bool(0.5) {
                let v = rng.random();
                cache.put(k.clone(), v, now);
                reference.put(&k, v, now);
            } else {
                let got = cache.get(&k, now).map(|e| e.value);
                let want = reference.get(&k, now);
                ensure!(got == want, "mismatch on get({k}) at {now}: {got:?} vs {want:?}");
            }
            ensure!(cache.len() <= cap, "over capacity");
            ops += 1;
        }
    }
    Ok(format!("1 backend call + 9 L1 hits, refetch after 301 s; {ops} ops over 1000 sequences agree"))
}

// ---------------------------------------------------------------- 6

fn waterfall_discipline() -> Outcome {
    let clock = Arc::new(ManualClock::new());
    let setup = EvalSetup::with_mock(Arc::new(MockBackend::reference(clock.clone())), clock.clone());
    let build = |threshold: f64| {
        Router::new(
            RouterConfig {
                escalation_threshold: threshold,
                ..RouterConfig::default()
            },
            &setup.cache,
            setup.rules.clone(),
            setup.registry.clone(),
            setup.provider.clone(),
            reference_model_names(),
            clock.clone(),
        )
    };
    let data = generate_dataset(42);
    let session = SessionState::new("w");
    let router = build(0.6);
    let mut escalated = 0;
    for item in &data {
        let before = router.counters();
        let d = router.route(&QueryRecord::new(&item.id, "w", &item.text, 0), &session);
        let after = router.counters();
        let conf = setup.rules.classify(&normalize_query_text(&item.text)).confidence;
        let l3 = after.l3_invocations - before.l3_invocations;
        ensure!(after.l2_invocations - before.l2_invocations == 1, "L2 not invoked for {}", item.id);
        ensure!((l3 == 1) == (conf < 0.6), "{}: L3 {l3} with L2 confidence {conf}", item.id);
        escalated += l3;
        router.remember(&d.key, &d.outcome, Some("r".into()));
    }
    let before = router.counters();
    for item in &data {
        let d = router.route(&QueryRecord::new(&item.id, "w", &item.text, 0), &session);
        ensure!(d.outcome.level == RoutingLevel::L1Cache, "{} missed the cache", item.id);
    }
    let after = router.counters();
    ensure!(
        after.l2_invocations == before.l2_invocations && after.l3_invocations == before.l3_invocations,
        "classifiers ran on cache hits"
    );

    let zero = build(0.0);
    for item in &data {
        zero.route(&QueryRecord::new(&item.id, "z", &item.text, 0), &session);
    }
    ensure!(zero.counters().l3_invocations == 0, "L3 ran with threshold 0");

    let base = run_eval(&setup, &data, EvalMode::Baseline, 1, None, None).map_err(|e| e.to_string())?;
    ensure!(base.counters == Default::default(), "baseline invoked the router: {:?}", base.counters);
    Ok(format!(
        "{escalated}/150 escalated exactly when confidence < 0.6; 150 L1 hits skip L2/L3; threshold 0 -> 0 L3; baseline counters zero"
    ))
}

// ---------------------------------------------------------------- 7

/// Gives every distinct token its own axis.
struct Orthogonal {
    axes: Mutex<HashMap<String, usize>>,
}

impl EmbeddingProvider for Orthogonal {
    fn dimension(&self) -> usize {
        256
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, SemanticError> {
        let mut axes = self.axes.lock().unwrap();
        let n = axes.len();
        let i = *axes.entry(text.to_string()).or_insert(n);
        let mut v = vec![0.0; 256];
        v[i % 256] = 1.0;
        Ok(EmbeddingVector::normalized(v))
    }
}

fn quality_properties() -> Outcome {
    let e = HashEmbedder::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let alphabet: Vec<char> = "abcdefghijklmnopqrstuvwxyz0123456789 ,.!?ABC".chars().collect();
    for i in 0..100 {
        let len = rng.random_range(0..120);
        let s: String = (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
        let q = quality_score(&s, &s, &e).map_err(|e| e.to_string())?;
        ensure!(q == 1.0, "string {i} scored {q}");
    }
    let orth = Orthogonal {
        axes: Mutex::new(HashMap::new()),
    };
    let q = quality_score("red green blue", "circle square", &orth).map_err(|e| e.to_string())?;
    ensure!(q == 0.0, "disjoint texts scored {q}");
    let f = greedy_f1(&[vec![1.0, 0.2], vec![0.2, 0.5]]);
    ensure!(f == 0.75, "hand matrix F1 {f}");
    Ok("identity 1.0 on 100 strings; disjoint 0.0; hand 2x2 F1 = 0.75".into())
}

// ---------------------------------------------------------------- 8

fn sha256_file(path: &std::path::Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).expect("readable")))
}

fn adaptive_tuner() -> Outcome {
    let cfg = AdaptConfig::default();
    let base = TierThresholds::default();

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rules_path = dir.path().join("rules.toml");
    let seeds_path = dir.path().join("seeds.toml");
    std::fs::write(&rules_path, REFERENCE_RULES).map_err(|e| e.to_string())?;
    std::fs::write(&seeds_path, REFERENCE_SEEDS).map_err(|e| e.to_string())?;
    let before_files = (sha256_file(&rules_path), sha256_file(&seeds_path));

    let clock = Arc::new(ManualClock::new());
    let mock = Arc::new(MockBackend::reference(clock.clone()));
    let provider: Arc<dyn EmbeddingProvider> = Arc::new(HashEmbedder::default());
    let rules = Arc::new(load_rules_file(&rules_path).map_err(|e| e.to_string())?);
    let seeds = SeedSets::load(&seeds_path).map_err(|e| e.to_string())?;
    let registry = Arc::new(build_task_vectors(provider.as_ref(), &seeds).map_err(|e| e.to_string())?);
    let before_models = (rules.fingerprint(), registry.fingerprint());
    let router = Arc::new(Router::new(
        RouterConfig::default(),
        &Default::default(),
        rules.clone(),
        registry.clone(),
        provider,
        reference_model_names(),
        clock.clone(),
    ));
    let meter = Arc::new(Meter::new(&TelemetryConfig::default(), None, clock.clone()));
    let pipeline = Pipeline::new(router, Arc::new(ModelManager::with_mock(mock, clock)), meter, cfg);
    let session = Mutex::new(SessionState::new("scripted"));
    for text in ["hi there", "good morning", "thanks a lot"] {
        let s = pipeline
            .process(&QueryRecord::new(text, "scripted", text, 0), &session, |_| Some(0.5))
            .map_err(|e| e.to_string())?;
        ensure!(s.outcome.tier == ModelTier::Small, "'{text}' not routed to Small");
    }
    let s = session.lock().unwrap().clone();
    ensure!(s.adjustment.small_max_delta == -5, "small_max delta {}", s.adjustment.small_max_delta);
    ensure!(s.adjustment.medium_max_delta == 0, "medium_max delta moved");
    let eff = effective_thresholds(&s, &base);
    ensure!(eff.small_max() == 28, "effective small_max {}", eff.small_max());

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let directions = [Direction::RouteUpward, Direction::RouteDownward];
    let boundaries = [Boundary::SmallMax, Boundary::MediumMax];
    for seq in 0..100 {
        let sm = rng.random_range(0..80);
        let mm = rng.random_range(sm + 10..=99.min(sm + 60));
        let base = TierThresholds::new(sm, mm).map_err(|e| e.to_string())?;
        let mut st = SessionState::new("r");
        for _ in 0..rng.random_range(0..40) {
            let signal = MisrouteSignal {
                direction: directions[rng.random_range(0..2)],
                boundary: boundaries[rng.random_range(0..2)],
            };
            adjust_thresholds(&mut st, signal, &cfg);
            let a = st.adjustment;
            ensure!(a.small_max_delta.abs() <= 15 && a.medium_max_delta.abs() <= 15, "seq {seq}: {a:?}");
            let e = effective_thresholds(&st, &base);
            ensure!(e.medium_max() - e.small_max() >= 10, "seq {seq}: gap {e:?}");
            ensure!((e.small_max() - base.small_max()).abs() <= 15, "seq {seq}: small drift");
            ensure!((e.medium_max() - base.medium_max()).abs() <= 15, "seq {seq}: medium drift");
        }
        // Random outcomes through the full observe path as well.
        let mut st = SessionState::new("o");
        for _ in 0..30 {
            let tier = [ModelTier::Small, ModelTier::Medium, ModelTier::Large][rng.random_range(0..3)];
            let outcome = ecoroute_core::RoutingOutcome {
                level: RoutingLevel::L2Rules,
                score: ecoroute_core::ComplexityScore::clamped(50),
                confidence: 0.9,
                tier,
                model_name: tier.as_str().into(),
                decision_latency_ns: 0,
                category_hint: None,
            };
            observe(&mut st, &outcome, Some(rng.random()), &cfg);
            let a = st.adjustment;
            ensure!(a.small_max_delta.abs() <= 15 && a.medium_max_delta.abs() <= 15, "observe drift {a:?}");
        }
    }

    let after_files = (sha256_file(&rules_path), sha256_file(&seeds_path));
    let after_models = (rules.fingerprint(), registry.fingerprint());
    ensure!(before_files == after_files, "rule or seed file changed");
    ensure!(before_models == after_models, "rule table or task vectors changed");
    Ok("3 low-quality Small outcomes -> small_max -5 (33 -> 28); 100 random sequences bounded; checksums unchanged".into())
}

// ---------------------------------------------------------------- 9

fn single_residency() -> Outcome {
    let mut total = 0usize;
    for seed in 0..12u64 {
        let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
        let cfg = MockConfig {
            time_scale: 0.0005,
            ..MockConfig::default()
        };
        let mock = Arc::new(MockBackend::new(reference_model_names(), &cfg, clock.clone()));
        let manager = Arc::new(ModelManager::with_mock(mock.clone(), clock));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let threads = rng.random_range(2..8);
        let plans: Vec<Vec<(ModelTier, u64)>> = (0..threads)
            .map(|_| {
                (0..rng.random_range(3..10))
                    .map(|_| {
                        (
                            [ModelTier::Small, ModelTier::Medium, ModelTier::Large][rng.random_range(0..3)],
                            rng.random_range(0..3),
                        )
                    })
                    .collect()
            })
            .collect();
        std::thread::scope(|s| {
            for (t, plan) in plans.iter().enumerate() {
                let manager = manager.clone();
                s.spawn(move || {
                    for (i, (tier, pause)) in plan.iter().enumerate() {
                        std::thread::sleep(Duration::from_millis(*pause));
                        manager
                            .generate(*tier, &format!("seed {seed} thread {t} request {i}"))
                            .expect("mock generation");
                    }
                });
            }
        });
        let n: usize = plans.iter().map(Vec::len).sum();
        total += n;
        ensure!(mock.residency_violations() == 0, "seed {seed}: mock saw overlapping residency");
        let mut resident: Option<String> = None;
        for ev in manager.residency_trace() {
            match ev.kind {
                ResidencyEventKind::Loaded => {
                    ensure!(resident.is_none(), "seed {seed}: {} loaded while {:?} resident", ev.model, resident);
                    resident = Some(ev.model);
                }
                ResidencyEventKind::Released => {
                    ensure!(resident.as_deref() == Some(ev.model.as_str()), "seed {seed}: bad release");
                    resident = None;
                }
            }
        }
        let bodies = mock.captured_bodies();
        ensure!(bodies.len() == n, "seed {seed}: {} bodies for {n} requests", bodies.len());
        for b in bodies {
            let v: serde_json::Value = serde_json::from_str(&b).map_err(|e| e.to_string())?;
            ensure!(v["keep_alive"] == 0 && v["stream"] == false, "body {b}");
        }
    }
    Ok(format!("{total} concurrent requests over 12 schedules: no overlap, all bodies keep_alive=0 stream=false"))
}

// ---------------------------------------------------------------- 10

struct Constant(f64);

impl PowerSampler for Constant {
    fn sample(&self, at: Nanos) -> Option<PowerSample> {
        Some(PowerSample { at, watts: self.0 })
    }
    fn retrospective(&self) -> bool {
        true
    }
}

fn telemetry_integration() -> Outcome {
    let ten = secs_to_nanos(10.0);
    let samples: Vec<PowerSample> = (0..100).map(|k| PowerSample { at: k * 100_000_000, watts: 50.0 }).collect();
    let e = integrate_energy(&samples, 0, ten, 0.0);
    ensure!(within_rel(e.joules, 500.0, 0.01) && !e.fallback, "direct integration {e:?}");

    let clock: Arc<dyn Clock> = Arc::new(ManualClock::new());
    let gen = GenerationResult {
        text: String::new(),
        tokens_generated: 613,
        generation_duration_ns: ten,
        model_name: "m".into(),
        tier: ModelTier::Large,
        started_at: 0,
        finished_at: ten,
    };
    let cfg = TelemetryConfig::default();
    let metered = Meter::new(&cfg, Some(Arc::new(Constant(50.0))), clock.clone()).measure(&gen, 0);
    ensure!(within_rel(metered.energy_joules, 500.0, 0.01) && !metered.energy_fallback, "meter {metered:?}");

    let absent = Meter::new(&cfg, None, clock).measure(&gen, 0);
    ensure!(absent.energy_fallback, "fallback flag not set");
    ensure!((absent.energy_joules - 40.0 * 10.0).abs() < 1e-9, "fallback energy {}", absent.energy_joules);
    Ok(format!(
        "50 W x 10 s -> {:.3} J sampled; no samples -> {:.1} J from nominal 40 W, energy_fallback=true",
        metered.energy_joules, absent.energy_joules
    ))
}

// ----------------------------------------------------------------

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let ms = start.elapsed().as_millis();
    match result {
        Ok(detail) => {
            println!("PASS {id:>2} {name}: {detail} [{ms} ms]");
            true
        }
        Err(detail) => {
            println!("FAIL {id:>2} {name}: {detail} [{ms} ms]");
            false
        }
    }
}

fn main() {
    let mut ok = true;
    ok &= run(1, "carbon arithmetic", carbon_arithmetic);

    let shared = catch_unwind(mock_run).unwrap_or_else(|_| Err("mock run panicked".into()));
    let with_run = |f: fn(&MockRun) -> Outcome| {
        let shared = &shared;
        move || match shared {
            Ok(r) => f(r),
            Err(e) => Err(e.clone()),
        }
    };
    ok &= run(2, "mock end-to-end energy", with_run(mock_energy));
    ok &= run(3, "mock end-to-end latency", with_run(mock_latency));
    ok &= run(4, "routing metrics oracle", routing_metrics_oracle);
    ok &= run(5, "cache behavior", cache_behavior);
    ok &= run(6, "waterfall discipline", waterfall_discipline);
    ok &= run(7, "quality scorer properties", quality_properties);
    ok &= run(8, "adaptive tuner", adaptive_tuner);
    ok &= run(9, "single residency and wire conformance", single_residency);
    ok &= run(10, "telemetry integration", telemetry_integration);
    ok &= run(11, "report integrity", with_run(report_integrity));

    if !ok {
        std::process::exit(1);
    }
}
