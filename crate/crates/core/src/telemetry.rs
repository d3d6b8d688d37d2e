//! Power sampling, energy attribution and carbon conversion.
//!
//! Energy for a request is the mean sampled power inside the request's
//! observed window times the inference duration reported by the backend.
//! When a window holds no samples the tier's nominal power is used instead
//! and the record is flagged.

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, BufReader};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::GenerationResult;
use crate::clock::{nanos_to_secs, Clock, Nanos};
use crate::domain::ModelTier;

pub const JOULES_PER_KWH: f64 = 3.6e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub at: Nanos,
    pub watts: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub latency_seconds: f64,
    pub tokens: u64,
    pub tokens_per_second: f64,
    pub energy_joules: f64,
    pub carbon_grams: f64,
    /// Energy came from the nominal table rather than samples.
    pub energy_fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CarbonConfig {
    pub intensity_g_per_kwh: f64,
}

impl Default for CarbonConfig {
    fn default() -> Self {
        Self {
            intensity_g_per_kwh: 475.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TelemetryError {
    #[error("throughput needs a positive duration, got {0} s")]
    NonPositiveDuration(f64),
}

pub fn joules_to_carbon(joules: f64, cfg: &CarbonConfig) -> f64 {
    joules / JOULES_PER_KWH * cfg.intensity_g_per_kwh
}

pub fn throughput(tokens: u64, duration_seconds: f64) -> Result<f64, TelemetryError> {
    if duration_seconds > 0.0 {
        Ok(tokens as f64 / duration_seconds)
    } else {
        Err(TelemetryError::NonPositiveDuration(duration_seconds))
    }
}

/// Mean watts of the samples with `start <= at < end`.
pub fn mean_power(samples: &[PowerSample], start: Nanos, end: Nanos) -> Option<f64> {
    let (sum, n) = samples
        .iter()
        .filter(|s| s.at >= start && s.at < end)
        .fold((0.0, 0usize), |(sum, n), s| (sum + s.watts, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub joules: f64,
    pub mean_watts: f64,
    pub fallback: bool,
}

/// Mean in-window power times the window length, or `nominal_watts` times
/// the window length when the window holds no samples.
pub fn integrate_energy(
    samples: &[PowerSample],
    window_start: Nanos,
    window_end: Nanos,
    nominal_watts: f64,
) -> EnergyEstimate {
    let seconds = nanos_to_secs(window_end.saturating_sub(window_start));
    energy_over(mean_power(samples, window_start, window_end), seconds, nominal_watts)
}

fn energy_over(mean: Option<f64>, seconds: f64, nominal_watts: f64) -> EnergyEstimate {
    match mean {
        Some(w) => EnergyEstimate {
            joules: w * seconds,
            mean_watts: w,
            fallback: false,
        },
        None => EnergyEstimate {
            joules: nominal_watts * seconds,
            mean_watts: nominal_watts,
            fallback: true,
        },
    }
}

pub trait PowerSampler: Send + Sync {
    /// Device power at `at`, or `None` when the provider cannot answer.
    fn sample(&self, at: Nanos) -> Option<PowerSample>;

    /// Whether `sample` can answer for past instants. Simulated sources can;
    /// real devices are polled by a [`SamplingLoop`] instead.
    fn retrospective(&self) -> bool {
        false
    }
}

pub struct NullSampler;

impl PowerSampler for NullSampler {
    fn sample(&self, _at: Nanos) -> Option<PowerSample> {
        None
    }
}

/// Reads power from a long-running external command that prints one reading
/// per line, e.g. `nvidia-smi --query-gpu=power.draw --format=csv,noheader,nounits -lms 100`.
/// The first number on each line is taken as watts.
pub struct CommandSampler {
    latest: Arc<Mutex<Option<f64>>>,
    child: Mutex<Child>,
}

impl CommandSampler {
    pub fn spawn(command: &str) -> std::io::Result<Self> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty sampler command"))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let latest = Arc::new(Mutex::new(None));
        let sink = latest.clone();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if let Some(w) = parse_watts(&line) {
                    *sink.lock().expect("sampler lock") = Some(w);
                }
            }
            *sink.lock().expect("sampler lock") = None;
        });
        Ok(Self {
            latest,
            child: Mutex::new(child),
        })
    }
}

impl Drop for CommandSampler {
    fn drop(&mut self) {
        if let Ok(mut c) = self.child.lock() {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

impl PowerSampler for CommandSampler {
    fn sample(&self, at: Nanos) -> Option<PowerSample> {
        let watts = (*self.latest.lock().expect("sampler lock"))?;
        Some(PowerSample { at, watts })
    }
}

pub fn parse_watts(line: &str) -> Option<f64> {
    line.split(|c: char| c.is_whitespace() || c == ',' || c == ':')
        .map(|t| t.trim_end_matches(['W', 'w']))
        .find_map(|t| t.parse::<f64>().ok())
        .filter(|w| w.is_finite() && *w >= 0.0)
}

/// Time-ordered ring of samples shared between the sampling loop and meters.
pub struct SampleBuffer {
    inner: Mutex<VecDeque<PowerSample>>,
    capacity: usize,
}

impl SampleBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            inner: Mutex::new(VecDeque::with_capacity(capacity.min(4096))),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&self, s: PowerSample) {
        let mut q = self.inner.lock().expect("buffer lock");
        if q.len() == self.capacity {
            q.pop_front();
        }
        q.push_back(s);
    }

    /// Samples with `start <= at < end`.
    pub fn window(&self, start: Nanos, end: Nanos) -> Vec<PowerSample> {
        self.inner
            .lock()
            .expect("buffer lock")
            .iter()
            .filter(|s| s.at >= start && s.at < end)
            .copied()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("buffer lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Background thread polling a sampler at a fixed wall-clock period.
pub struct SamplingLoop {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl SamplingLoop {
    pub fn start(
        sampler: Arc<dyn PowerSampler>,
        buffer: Arc<SampleBuffer>,
        clock: Arc<dyn Clock>,
        period: Duration,
    ) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = std::thread::Builder::new()
            .name("power-sampler".into())
            .spawn(move || {
                while !flag.load(Ordering::Relaxed) {
                    if let Some(s) = sampler.sample(clock.now()) {
                        buffer.push(s);
                    }
                    std::thread::sleep(period);
                }
            })
            .expect("spawn sampling thread");
        Self {
            stop,
            handle: Some(handle),
        }
    }
}

impl Drop for SamplingLoop {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Mock,
    Command,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TelemetryConfig {
    pub sampler: SamplerKind,
    pub period_ms: u64,
    /// Used with `sampler = "command"`.
    pub command: Option<String>,
    pub nominal_watts: BTreeMap<ModelTier, f64>,
    pub carbon: CarbonConfig,
}

impl Default for TelemetryConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerKind::Mock,
            period_ms: 100,
            command: None,
            nominal_watts: BTreeMap::from([
                (ModelTier::Small, 10.0),
                (ModelTier::Medium, 25.0),
                (ModelTier::Large, 40.0),
            ]),
            carbon: CarbonConfig::default(),
        }
    }
}

impl TelemetryConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.period_ms == 0 {
            return Err("telemetry.period_ms must be positive".into());
        }
        if self.carbon.intensity_g_per_kwh.is_nan() || self.carbon.intensity_g_per_kwh <= 0.0 {
            return Err("telemetry.carbon.intensity_g_per_kwh must be positive".into());
        }
        for (tier, w) in &self.nominal_watts {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(format!("telemetry.nominal_watts.{tier} must be non-negative"));
            }
        }
        if self.sampler == SamplerKind::Command && self.command.is_none() {
            return Err("telemetry.command is required when telemetry.sampler = \"command\"".into());
        }
        Ok(())
    }
}

enum Source {
    Direct(Arc<dyn PowerSampler>),
    Buffered {
        buffer: Arc<SampleBuffer>,
        _loop: SamplingLoop,
    },
    Absent,
}

/// Turns generation results into telemetry records.
pub struct Meter {
    source: Source,
    period_ns: Nanos,
    nominal: BTreeMap<ModelTier, f64>,
    carbon: CarbonConfig,
}

impl Meter {
    pub fn new(cfg: &TelemetryConfig, sampler: Option<Arc<dyn PowerSampler>>, clock: Arc<dyn Clock>) -> Self {
        let period = Duration::from_millis(cfg.period_ms.max(1));
        let source = match sampler {
            None => Source::Absent,
            Some(s) if s.retrospective() => Source::Direct(s),
            Some(s) => {
                let buffer = Arc::new(SampleBuffer::new(100_000));
                let lp = SamplingLoop::start(s, buffer.clone(), clock, period);
                Source::Buffered { buffer, _loop: lp }
            }
        };
        Self {
            source,
            period_ns: period.as_nanos() as Nanos,
            nominal: cfg.nominal_watts.clone(),
            carbon: cfg.carbon,
        }
    }

    pub fn carbon(&self) -> &CarbonConfig {
        &self.carbon
    }

    pub fn nominal_watts(&self, tier: ModelTier) -> f64 {
        self.nominal.get(&tier).copied().unwrap_or(0.0)
    }

    /// Samples covering the observed window. A retrospective source is read
    /// at the cadence midpoints `start + (k + 0.5)·period`, or at the window
    /// midpoint when the window is shorter than one period.
    fn samples(&self, start: Nanos, end: Nanos) -> Vec<PowerSample> {
        match &self.source {
            Source::Absent => Vec::new(),
            Source::Buffered { buffer, .. } => buffer.window(start, end),
            Source::Direct(s) => {
                let mut points = Vec::new();
                let mut t = start + self.period_ns / 2;
                while t < end {
                    points.push(t);
                    t += self.period_ns;
                }
                if points.is_empty() && end > start {
                    points.push(start + (end - start) / 2);
                }
                points.into_iter().filter_map(|t| s.sample(t)).collect()
            }
        }
    }

    pub fn measure(&self, gen: &GenerationResult, decision_latency_ns: Nanos) -> TelemetryRecord {
        let samples = self.samples(gen.started_at, gen.finished_at);
        let mean = mean_power(&samples, gen.started_at, gen.finished_at);
        let gen_seconds = nanos_to_secs(gen.generation_duration_ns);
        let energy = energy_over(mean, gen_seconds, self.nominal_watts(gen.tier));
        TelemetryRecord {
            latency_seconds: nanos_to_secs(decision_latency_ns) + gen_seconds,
            tokens: gen.tokens_generated,
            tokens_per_second: throughput(gen.tokens_generated, gen_seconds).unwrap_or(0.0),
            energy_joules: energy.joules,
            carbon_grams: joules_to_carbon(energy.joules, &self.carbon),
            energy_fallback: energy.fallback,
        }
    }

    /// Record for a response replayed from the cache: no inference ran.
    pub fn cached(&self, decision_latency_ns: Nanos) -> TelemetryRecord {
        TelemetryRecord {
            latency_seconds: nanos_to_secs(decision_latency_ns),
            tokens: 0,
            tokens_per_second: 0.0,
            energy_joules: 0.0,
            carbon_grams: 0.0,
            energy_fallback: false,
        }
    }
}
