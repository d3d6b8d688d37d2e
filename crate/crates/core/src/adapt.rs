//! Per-session threshold adaptation.
//!
//! A session keeps an append-only history of routed queries and their quality
//! signals. When the last `window` entries since the previous adjustment are
//! all misroutes at the same tier, the boundary above that tier is lowered by
//! `step`, so borderline queries land one tier higher. Adjustments are bounded
//! to `max_drift` points per boundary and never touch rules, task vectors or
//! models.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::domain::{CategoryHint, ModelTier, RoutingOutcome, TierThresholds};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub window: usize,
    pub step: i32,
    pub max_drift: i32,
    pub quality_floor: f64,
    pub downward_enabled: bool,
    /// Quality at or above this counts as evidence of over-routing.
    pub downward_ceiling: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            window: 3,
            step: 5,
            max_drift: 15,
            quality_floor: 0.85,
            downward_enabled: false,
            downward_ceiling: 0.98,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub category_hint: Option<CategoryHint>,
    pub tier: ModelTier,
    pub quality_signal: Option<f64>,
    pub misroute: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdAdjustment {
    pub small_max_delta: i32,
    pub medium_max_delta: i32,
}

impl ThresholdAdjustment {
    /// Base thresholds shifted by the deltas, with the Medium band kept at
    /// least `TierThresholds::MIN_GAP` wide.
    pub fn apply(&self, base: &TierThresholds) -> TierThresholds {
        let gap = TierThresholds::MIN_GAP;
        let medium = (base.medium_max() + self.medium_max_delta).clamp(gap, 99);
        let small = (base.small_max() + self.small_max_delta).clamp(0, medium - gap);
        TierThresholds::new(small, medium).expect("clamped thresholds are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    RouteUpward,
    RouteDownward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    SmallMax,
    MediumMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MisrouteSignal {
    pub direction: Direction,
    pub boundary: Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub history: Vec<HistoryEntry>,
    pub adjustment: ThresholdAdjustment,
    /// History index where the current detection window begins.
    window_start: usize,
}

impl SessionState {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            history: Vec::new(),
            adjustment: ThresholdAdjustment::default(),
            window_start: 0,
        }
    }
}

pub fn record_outcome(
    session: &mut SessionState,
    outcome: &RoutingOutcome,
    quality_signal: Option<f64>,
    cfg: &AdaptConfig,
) {
    let misroute = quality_signal.is_some_and(|q| q < cfg.quality_floor);
    session.history.push(HistoryEntry {
        category_hint: outcome.category_hint,
        tier: outcome.tier,
        quality_signal,
        misroute,
    });
}

pub fn detect_misroute_pattern(session: &SessionState, cfg: &AdaptConfig) -> Option<MisrouteSignal> {
    let k = cfg.window.max(1);
    let recent = &session.history[session.window_start.min(session.history.len())..];
    if recent.len() < k {
        return None;
    }
    let last = &recent[recent.len() - k..];
    let tier = last[0].tier;
    if last.iter().any(|e| e.tier != tier) {
        return None;
    }
    if last.iter().all(|e| e.misroute) {
        let boundary = match tier {
            ModelTier::Small => Boundary::SmallMax,
            ModelTier::Medium => Boundary::MediumMax,
            ModelTier::Large => return None,
        };
        return Some(MisrouteSignal {
            direction: Direction::RouteUpward,
            boundary,
        });
    }
    if cfg.downward_enabled
        && last
            .iter()
            .all(|e| !e.misroute && e.quality_signal.is_some_and(|q| q >= cfg.downward_ceiling))
    {
        let boundary = match tier {
            ModelTier::Small => return None,
            ModelTier::Medium => Boundary::SmallMax,
            ModelTier::Large => Boundary::MediumMax,
        };
        return Some(MisrouteSignal {
            direction: Direction::RouteDownward,
            boundary,
        });
    }
    None
}

pub fn adjust_thresholds(session: &mut SessionState, signal: MisrouteSignal, cfg: &AdaptConfig) {
    let step = match signal.direction {
        Direction::RouteUpward => -cfg.step,
        Direction::RouteDownward => cfg.step,
    };
    let delta = match signal.boundary {
        Boundary::SmallMax => &mut session.adjustment.small_max_delta,
        Boundary::MediumMax => &mut session.adjustment.medium_max_delta,
    };
    *delta = (*delta + step).clamp(-cfg.max_drift, cfg.max_drift);
    session.window_start = session.history.len();
}

/// Records an outcome and applies any adjustment it triggers.
pub fn observe(
    session: &mut SessionState,
    outcome: &RoutingOutcome,
    quality_signal: Option<f64>,
    cfg: &AdaptConfig,
) -> Option<MisrouteSignal> {
    record_outcome(session, outcome, quality_signal, cfg);
    let signal = detect_misroute_pattern(session, cfg)?;
    adjust_thresholds(session, signal, cfg);
    Some(signal)
}

/// Sessions by id. Each session has its own lock so that updates within a
/// session serialize while different sessions proceed independently.
#[derive(Debug, Default)]
pub struct SessionStore {
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionState>>>>,
}

impl SessionStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_create(&self, session_id: &str) -> Arc<Mutex<SessionState>> {
        let mut map = self.sessions.lock().expect("session map poisoned");
        map.entry(session_id.to_string())
            .or_insert_with(|| Arc::new(Mutex::new(SessionState::new(session_id))))
            .clone()
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("session map poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.sessions.lock().expect("session map poisoned").clear();
    }
}
