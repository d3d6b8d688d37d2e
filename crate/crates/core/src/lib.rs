//! Energy-aware inference routing.
//!
//! Each query passes through a three-level waterfall: an LRU+TTL cache of
//! prior decisions, a deterministic rule engine, and an embedding classifier
//! that compares the query against per-category task vectors. The resulting
//! complexity score picks the smallest adequate model tier, which is then
//! served by a single-residency model manager while the telemetry module
//! attributes energy and carbon to the request.
//!
//! The [`eval`] module reproduces the baseline-vs-adaptive comparison against
//! the deterministic [`backend::MockBackend`].

pub mod adapt;
pub mod backend;
pub mod cache;
pub mod clock;
pub mod domain;
pub mod eval;
pub mod http;
pub mod pipeline;
pub mod record;
pub mod router;
pub mod rules;
pub mod semantic;
pub mod telemetry;

pub use clock::{Clock, ManualClock, SystemClock};
pub use domain::{
    normalize_query_text, tier_for_score, Complexity, ComplexityScore, ModelTier, QueryRecord,
    RoutingLevel, RoutingOutcome, TierThresholds,
};
