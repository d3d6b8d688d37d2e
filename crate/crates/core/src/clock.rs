//! Monotonic clock abstraction.
//!
//! Every component that measures or waits on time takes an `Arc<dyn Clock>`,
//! so tests can drive TTL expiry, mock generation latency and power sampling
//! without sleeping.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

/// Nanoseconds on a monotonic timeline.
pub type Nanos = u64;

pub const NANOS_PER_SEC: f64 = 1e9;

pub fn secs_to_nanos(secs: f64) -> Nanos {
    (secs * NANOS_PER_SEC).round().max(0.0) as Nanos
}

pub fn nanos_to_secs(ns: Nanos) -> f64 {
    ns as f64 / NANOS_PER_SEC
}

pub trait Clock: Send + Sync {
    /// Current monotonic time.
    fn now(&self) -> Nanos;

    /// Blocks for `d`. Virtual clocks advance instead of blocking.
    fn sleep(&self, d: Duration);
}

/// Wall-clock time measured from process-local origin.
#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Nanos {
        self.origin.elapsed().as_nanos() as Nanos
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// A clock that only moves when told to. `sleep` advances it immediately.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: AtomicU64,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(ns: Nanos) -> Self {
        Self {
            now: AtomicU64::new(ns),
        }
    }

    pub fn advance(&self, d: Duration) {
        self.now.fetch_add(d.as_nanos() as u64, Ordering::SeqCst);
    }

    pub fn advance_secs(&self, secs: f64) {
        self.now.fetch_add(secs_to_nanos(secs), Ordering::SeqCst);
    }

    pub fn set(&self, ns: Nanos) {
        self.now.store(ns, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Nanos {
        self.now.load(Ordering::SeqCst)
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manual_clock_sleep_advances() {
        let c = ManualClock::new();
        c.sleep(Duration::from_millis(250));
        assert_eq!(c.now(), 250_000_000);
        c.advance_secs(1.5);
        assert_eq!(c.now(), 1_750_000_000);
    }

    #[test]
    fn system_clock_is_monotone() {
        let c = SystemClock::new();
        let a = c.now();
        let b = c.now();
        assert!(b >= a);
    }
}
