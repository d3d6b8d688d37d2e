//! Level-1 routing cache: LRU eviction with a fixed time-to-live.
//!
//! Expiry is lazy: an expired entry is dropped when it is read, and `put`
//! purges everything past its TTL before it considers evicting a live entry.
//! Since the TTL is uniform, insertion order is expiry order, so the purge
//! walks a `BTreeMap` index from the front.

use std::collections::BTreeMap;
use std::num::NonZeroUsize;
use std::sync::Arc;

use lru::LruCache;
use serde::{Deserialize, Serialize};
use std::sync::Mutex;

use crate::clock::{secs_to_nanos, Clock, Nanos};
use crate::domain::RoutingOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheConfig {
    pub capacity: usize,
    pub ttl_seconds: f64,
    /// On a hit, return the stored response instead of regenerating.
    pub serve_responses: bool,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            capacity: 1024,
            ttl_seconds: 300.0,
            serve_responses: true,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.capacity == 0 {
            return Err("cache.capacity must be at least 1".into());
        }
        if self.ttl_seconds.is_nan() || self.ttl_seconds <= 0.0 {
            return Err("cache.ttl_seconds must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry<V> {
    pub key: String,
    pub value: V,
    pub inserted_at: Nanos,
    pub last_access: Nanos,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    /// Live entries dropped to make room.
    pub evictions: u64,
    /// Entries dropped because their TTL ran out.
    pub expirations: u64,
    pub size: usize,
}

impl CacheStats {
    pub fn hit_rate(&self) -> Option<f64> {
        let total = self.hits + self.misses;
        (total > 0).then(|| self.hits as f64 / total as f64)
    }
}

struct Slot<V> {
    entry: CacheEntry<V>,
    order: (Nanos, u64),
}

struct Inner<V> {
    map: LruCache<String, Slot<V>>,
    by_age: BTreeMap<(Nanos, u64), String>,
    seq: u64,
    stats: CacheStats,
}

impl<V> Inner<V> {
    fn remove(&mut self, key: &str) -> Option<Slot<V>> {
        let slot = self.map.pop(key)?;
        self.by_age.remove(&slot.order);
        Some(slot)
    }

    fn purge_expired(&mut self, now: Nanos, ttl: Nanos) {
        while let Some((&(inserted, seq), _)) = self.by_age.iter().next() {
            if now.saturating_sub(inserted) <= ttl {
                break;
            }
            let key = self.by_age.remove(&(inserted, seq)).expect("index entry");
            self.map.pop(&key);
            self.stats.expirations += 1;
        }
    }
}

/// Thread-safe LRU cache with TTL. All operations are linearizable.
pub struct TtlCache<V> {
    inner: Mutex<Inner<V>>,
    ttl: Nanos,
    capacity: usize,
}

impl<V: Clone> TtlCache<V> {
    pub fn new(capacity: usize, ttl_seconds: f64) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).expect("non-zero");
        Self {
            inner: Mutex::new(Inner {
                map: LruCache::new(cap),
                by_age: BTreeMap::new(),
                seq: 0,
                stats: CacheStats::default(),
            }),
            ttl: secs_to_nanos(ttl_seconds),
            capacity: cap.get(),
        }
    }

    pub fn from_config(cfg: &CacheConfig) -> Self {
        Self::new(cfg.capacity, cfg.ttl_seconds)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Returns the entry if present and not older than the TTL.
    pub fn get(&self, key: &str, now: Nanos) -> Option<CacheEntry<V>> {
        let mut inner = self.inner.lock().expect("cache lock poisoned");
        let expired = match inner.map.peek(key) {
            None => {
                inner.stats.misses += 1;
                return None;
            }
            Some(slot) => now.saturating_sub(slot.entry.inserted_at) > self.ttl,
        };
        if expired {
            inner.remove(key);
            inner.stats.expirations += 1;
            inner.stats.misses += 1;
            return None;
        }
        inner.stats.hits += 1;
        let slot = inner.map.get_mut(key).expect("present");
        slot.entry.last_access = slot.entry.last_access.max(now);
        Some(slot.entry.clone())
    }

    pub fn put(&self, key: impl Into<String>, value: V, now: Nanos) {
        let key = key.into();
        let mut inner = self.inner.lock().expect("cache lock poisoned");
        inner.remove(&key);
        inner.purge_expired(now, self.ttl);
        if inner.map.len() >= self.capacity {
            if let Some((_, slot)) = inner.map.pop_lru() {
                inner.by_age.remove(&slot.order);
                inner.stats.evictions += 1;
            }
        }
        inner.seq += 1;
        let order = (now, inner.seq);
        inner.by_age.insert(order, key.clone());
        inner.map.put(
            key.clone(),
            Slot {
                entry: CacheEntry {
                    key,
                    value,
                    inserted_at: now,
                    last_access: now,
                },
                order,
            },
        );
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock poisoned").map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keys in recency order, most recent first. Includes entries whose TTL
    /// has passed but which have not been purged yet.
    pub fn keys(&self) -> Vec<String> {
        let inner = self.inner.lock().expect("cache lock poisoned");
        inner.map.iter().map(|(k, _)| k.clone()).collect()
    }

    pub fn stats(&self) -> CacheStats {
        let inner = self.inner.lock().expect("cache lock poisoned");
        CacheStats {
            size: inner.map.len(),
            ..inner.stats
        }
    }

    pub fn clear(&self) {
        let mut inner = self.inner.lock().expect("cache lock poisoned");
        inner.map.clear();
        inner.by_age.clear();
    }
}

/// What the router stores per normalized query.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedRoute {
    pub outcome: RoutingOutcome,
    pub response_text: Option<String>,
}

pub type RoutingCache = TtlCache<CachedRoute>;

/// A cache bound to a clock, for callers that do not track time themselves.
pub struct ClockedCache<V> {
    cache: TtlCache<V>,
    clock: Arc<dyn Clock>,
}

impl<V: Clone> ClockedCache<V> {
    pub fn new(cache: TtlCache<V>, clock: Arc<dyn Clock>) -> Self {
        Self { cache, clock }
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry<V>> {
        self.cache.get(key, self.clock.now())
    }

    pub fn put(&self, key: impl Into<String>, value: V) {
        self.cache.put(key, value, self.clock.now())
    }

    pub fn inner(&self) -> &TtlCache<V> {
        &self.cache
    }
}
