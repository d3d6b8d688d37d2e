//! JSONL request log: one record per served query.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Mutex;
use std::thread::JoinHandle;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::ThresholdAdjustment;
use crate::domain::{Complexity, ModelTier, RoutingLevel};
use crate::pipeline::Served;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Baseline,
    Adaptive,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Baseline => "baseline",
            EvalMode::Adaptive => "adaptive",
        }
    }
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub ts: String,
    pub session_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
    pub routing_level: RoutingLevel,
    pub complexity_score: u8,
    pub confidence: f64,
    pub tier: ModelTier,
    pub model: String,
    pub decision_latency_ns: u64,
    pub latency_s: f64,
    pub tokens: u64,
    pub tokens_per_s: f64,
    pub energy_j: f64,
    pub energy_fallback: bool,
    pub carbon_g: f64,
    pub threshold_deltas: ThresholdAdjustment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Complexity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<EvalMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetition: Option<u32>,
}

pub fn wall_timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn query_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl LogRecord {
    pub fn from_served(session_id: &str, served: &Served) -> Self {
        let o = &served.outcome;
        let t = &served.telemetry;
        Self {
            ts: wall_timestamp(),
            session_id: session_id.to_string(),
            query_sha256: None,
            item_id: None,
            routing_level: o.level,
            complexity_score: o.score.value(),
            confidence: o.confidence,
            tier: o.tier,
            model: o.model_name.clone(),
            decision_latency_ns: o.decision_latency_ns,
            latency_s: t.latency_seconds,
            tokens: t.tokens,
            tokens_per_s: t.tokens_per_second,
            energy_j: t.energy_joules,
            energy_fallback: t.energy_fallback,
            carbon_g: t.carbon_grams,
            threshold_deltas: served.adjustment,
            quality: served.quality_signal,
            label: None,
            mode: None,
            repetition: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogReadError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>, LogReadError> {
    let file = File::open(path).map_err(|source| LogReadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| LogReadError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| LogReadError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

enum Msg {
    Line(String),
    Flush(Sender<()>),
}

/// Append-only JSONL log fed through a queue into one writer thread. Each
/// line is written and flushed before the next is taken, so a crash leaves
/// only whole lines behind.
pub struct JsonlWriter {
    tx: Mutex<Option<Sender<Msg>>>,
    handle: Mutex<Option<JoinHandle<io::Result<u64>>>>,
}

impl JsonlWriter {
    pub fn open(path: &Path) -> io::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self::from_writer(file))
    }

    pub fn from_writer<W: Write + Send + 'static>(w: W) -> Self {
        let (tx, rx) = mpsc::channel();
        let handle = std::thread::Builder::new()
            .name("jsonl-writer".into())
            .spawn(move || writer_loop(w, rx))
            .expect("spawn log writer");
        Self {
            tx: Mutex::new(Some(tx)),
            handle: Mutex::new(Some(handle)),
        }
    }

    pub fn append<T: Serialize>(&self, record: &T) -> io::Result<()> {
        let line = serde_json::to_string(record).map_err(io::Error::other)?;
        let tx = self.tx.lock().expect("log sender lock");
        tx.as_ref()
            .ok_or_else(|| io::Error::other("log closed"))?
            .send(Msg::Line(line))
            .map_err(|_| io::Error::other("log writer stopped"))
    }

    /// Blocks until everything queued so far is on disk.
    pub fn flush(&self) -> io::Result<()> {
        let (ack_tx, ack_rx) = mpsc::channel();
        {
            let tx = self.tx.lock().expect("log sender lock");
            tx.as_ref()
                .ok_or_else(|| io::Error::other("log closed"))?
                .send(Msg::Flush(ack_tx))
                .map_err(|_| io::Error::other("log writer stopped"))?;
        }
        ack_rx.recv().map_err(|_| io::Error::other("log writer stopped"))
    }

    /// Stops the writer and returns the number of lines written.
    pub fn close(&self) -> io::Result<u64> {
        self.tx.lock().expect("log sender lock").take();
        match self.handle.lock().expect("log handle lock").take() {
            Some(h) => h.join().map_err(|_| io::Error::other("log writer panicked"))?,
            None => Ok(0),
        }
    }
}

impl Drop for JsonlWriter {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

fn writer_loop<W: Write>(mut w: W, rx: Receiver<Msg>) -> io::Result<u64> {
    let mut n = 0;
    for msg in rx {
        match msg {
            Msg::Line(line) => {
                w.write_all(line.as_bytes())?;
                w.write_all(b"\n")?;
                w.flush()?;
                n += 1;
            }
            Msg::Flush(ack) => {
                w.flush()?;
                let _ = ack.send(());
            }
        }
    }
    Ok(n)
}
