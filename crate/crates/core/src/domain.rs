//! Core types shared by every routing level.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Nanos;
use crate::rules::RuleCategory;

/// One inbound query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub session_id: String,
    pub text: String,
    pub received_at: Nanos,
}

impl QueryRecord {
    pub fn new(
        id: impl Into<String>,
        session_id: impl Into<String>,
        text: impl Into<String>,
        received_at: Nanos,
    ) -> Self {
        Self {
            id: id.into(),
            session_id: session_id.into(),
            text: text.into(),
            received_at,
        }
    }
}

/// Normalized complexity on a 0..=100 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComplexityScore(u8);

impl ComplexityScore {
    pub const MIN: ComplexityScore = ComplexityScore(0);
    pub const MAX: ComplexityScore = ComplexityScore(100);

    /// Clamps any raw classifier output into range.
    pub fn clamped(raw: i64) -> Self {
        Self(raw.clamp(0, 100) as u8)
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl fmt::Display for ComplexityScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Model size class. Ordered `Small < Medium < Large`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTier {
    Small,
    Medium,
    Large,
}

impl ModelTier {
    pub const ALL: [ModelTier; 3] = [ModelTier::Small, ModelTier::Medium, ModelTier::Large];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelTier::Small => "small",
            ModelTier::Medium => "medium",
            ModelTier::Large => "large",
        }
    }

    /// The dataset category this tier is meant to serve.
    pub fn complexity(self) -> Complexity {
        match self {
            ModelTier::Small => Complexity::Simple,
            ModelTier::Medium => Complexity::Medium,
            ModelTier::Large => Complexity::Complex,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ModelTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelTier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "small" => Ok(ModelTier::Small),
            "medium" => Ok(ModelTier::Medium),
            "large" => Ok(ModelTier::Large),
            other => Err(format!("unknown tier '{other}', expected small, medium or large")),
        }
    }
}

/// Query complexity category. Used as dataset label and as the
/// semantic classifier's output class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Complexity {
    Simple,
    Medium,
    Complex,
}

impl Complexity {
    pub const ALL: [Complexity; 3] = [Complexity::Simple, Complexity::Medium, Complexity::Complex];

    pub fn as_str(self) -> &'static str {
        match self {
            Complexity::Simple => "simple",
            Complexity::Medium => "medium",
            Complexity::Complex => "complex",
        }
    }

    pub fn tier(self) -> ModelTier {
        match self {
            Complexity::Simple => ModelTier::Small,
            Complexity::Medium => ModelTier::Medium,
            Complexity::Complex => ModelTier::Large,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Complexity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Complexity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simple" => Ok(Complexity::Simple),
            "medium" => Ok(Complexity::Medium),
            "complex" => Ok(Complexity::Complex),
            other => Err(format!("unknown label '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ThresholdError {
    #[error("small_max ({small_max}) must be below medium_max ({medium_max}) by at least {min_gap}")]
    BandTooNarrow {
        small_max: i32,
        medium_max: i32,
        min_gap: i32,
    },
    #[error("thresholds must satisfy 0 <= small_max and medium_max <= 99, got {small_max}/{medium_max}")]
    OutOfRange { small_max: i32, medium_max: i32 },
}

/// Score cut points. `score <= small_max` is Small, `score <= medium_max`
/// is Medium, anything above is Large.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawThresholds")]
pub struct TierThresholds {
    small_max: u8,
    medium_max: u8,
}

#[derive(Deserialize)]
struct RawThresholds {
    small_max: i32,
    medium_max: i32,
}

impl TryFrom<RawThresholds> for TierThresholds {
    type Error = ThresholdError;

    fn try_from(raw: RawThresholds) -> Result<Self, Self::Error> {
        TierThresholds::new(raw.small_max, raw.medium_max)
    }
}

impl TierThresholds {
    /// Minimum width of the Medium band.
    pub const MIN_GAP: i32 = 10;

    pub fn new(small_max: i32, medium_max: i32) -> Result<Self, ThresholdError> {
        if small_max < 0 || medium_max > 99 {
            return Err(ThresholdError::OutOfRange {
                small_max,
                medium_max,
            });
        }
        if medium_max - small_max < Self::MIN_GAP {
            return Err(ThresholdError::BandTooNarrow {
                small_max,
                medium_max,
                min_gap: Self::MIN_GAP,
            });
        }
        Ok(Self {
            small_max: small_max as u8,
            medium_max: medium_max as u8,
        })
    }

    pub fn small_max(&self) -> i32 {
        self.small_max as i32
    }

    pub fn medium_max(&self) -> i32 {
        self.medium_max as i32
    }
}

impl Default for TierThresholds {
    fn default() -> Self {
        Self {
            small_max: 33,
            medium_max: 66,
        }
    }
}

pub fn tier_for_score(score: ComplexityScore, thresholds: &TierThresholds) -> ModelTier {
    let s = score.value();
    if s <= thresholds.small_max {
        ModelTier::Small
    } else if s <= thresholds.medium_max {
        ModelTier::Medium
    } else {
        ModelTier::Large
    }
}

/// Which waterfall level produced a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoutingLevel {
    L1Cache,
    L2Rules,
    L3Semantic,
    /// Tier fixed by the caller; the waterfall was not consulted.
    Forced,
}

impl RoutingLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            RoutingLevel::L1Cache => "L1Cache",
            RoutingLevel::L2Rules => "L2Rules",
            RoutingLevel::L3Semantic => "L3Semantic",
            RoutingLevel::Forced => "Forced",
        }
    }
}

impl fmt::Display for RoutingLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What kind of query a classifier thought it saw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "source", content = "category", rename_all = "lowercase")]
pub enum CategoryHint {
    Rule(RuleCategory),
    Semantic(Complexity),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingOutcome {
    pub level: RoutingLevel,
    pub score: ComplexityScore,
    pub confidence: f64,
    pub tier: ModelTier,
    pub model_name: String,
    pub decision_latency_ns: u64,
    pub category_hint: Option<CategoryHint>,
}

/// Lowercases, trims and collapses internal whitespace runs to one space.
pub fn normalize_query_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}
