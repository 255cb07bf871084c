//! Functional-equivalence cache and tabulist. Both are shared-safe: lookups
//! and insertions take `&self`, counters are atomic.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;

use crate::space::FitnessRecord;
use crate::ufh::FunctionalHash;

pub const DEFAULT_CACHE_CAPACITY: usize = 1_000_000;

#[derive(Debug, Default)]
struct Slots {
    map: HashMap<u64, (FitnessRecord, u64)>,
    /// Insertion order; entries whose generation no longer matches the map
    /// were removed earlier and are skipped.
    order: VecDeque<(u64, u64)>,
    generation: u64,
}

impl Slots {
    fn insert(&mut self, key: u64, record: FitnessRecord, capacity: usize) -> u64 {
        self.generation += 1;
        self.map.insert(key, (record, self.generation));
        self.order.push_back((key, self.generation));
        let mut evicted = 0;
        while self.map.len() > capacity {
            let (k, g) = self.order.pop_front().expect("order covers the map");
            if self.map.get(&k).is_some_and(|&(_, live)| live == g) {
                self.map.remove(&k);
                evicted += 1;
            }
        }
        if self.order.len() > 2 * capacity + 64 {
            let map = &self.map;
            self.order.retain(|(k, g)| map.get(k).is_some_and(|&(_, live)| live == *g));
        }
        evicted
    }
}

/// Event counts since construction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheCounters {
    pub hits: u64,
    pub misses: u64,
    pub forgets: u64,
    pub collisions: u64,
    pub evictions: u64,
}

/// Map from functional hash to fitness with least-recently-inserted eviction.
#[derive(Debug)]
pub struct Cache {
    slots: Mutex<Slots>,
    capacity: usize,
    hits: AtomicU64,
    misses: AtomicU64,
    forgets: AtomicU64,
    collisions: AtomicU64,
    evictions: AtomicU64,
}

impl Default for Cache {
    fn default() -> Self {
        Self::new(DEFAULT_CACHE_CAPACITY)
    }
}

impl Cache {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "cache capacity must be positive");
        Self {
            slots: Mutex::new(Slots::default()),
            capacity,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            forgets: AtomicU64::new(0),
            collisions: AtomicU64::new(0),
            evictions: AtomicU64::new(0),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.lock().map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Plain lookup; does not touch the counters.
    pub fn get(&self, key: FunctionalHash) -> Option<FitnessRecord> {
        self.slots.lock().map.get(&key.0).map(|&(r, _)| r)
    }

    /// Lookup that counts a hit or a miss.
    pub fn lookup(&self, key: FunctionalHash) -> Option<FitnessRecord> {
        let found = self.get(key);
        let counter = if found.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        found
    }

    /// Inserts unless the key is already present; returns the stored record.
    pub fn insert_if_absent(&self, key: FunctionalHash, record: FitnessRecord) -> FitnessRecord {
        let mut slots = self.slots.lock();
        if let Some(&(existing, _)) = slots.map.get(&key.0) {
            return existing;
        }
        let evicted = slots.insert(key.0, record, self.capacity);
        self.evictions.fetch_add(evicted, Ordering::Relaxed);
        record
    }

    /// Folds one more evaluation into the running mean stored under `key`,
    /// unless it already holds `max_evals`. Returns the stored record.
    pub fn aggregate(&self, key: FunctionalHash, fresh: FitnessRecord, max_evals: u32) -> FitnessRecord {
        let mut slots = self.slots.lock();
        if let Some((rec, _)) = slots.map.get_mut(&key.0) {
            if rec.evals < max_evals {
                rec.evals += 1;
                rec.fitness += (fresh.fitness - rec.fitness) / f64::from(rec.evals);
            }
            return *rec;
        }
        let evicted = slots.insert(key.0, FitnessRecord { evals: 1, ..fresh }, self.capacity);
        self.evictions.fetch_add(evicted, Ordering::Relaxed);
        FitnessRecord { evals: 1, ..fresh }
    }

    /// Deletes `key`, counting a forget if it was present.
    pub fn forget(&self, key: FunctionalHash) -> bool {
        let removed = self.slots.lock().map.remove(&key.0).is_some();
        if removed {
            self.forgets.fetch_add(1, Ordering::Relaxed);
        }
        removed
    }

    pub fn record_collision(&self) {
        self.collisions.fetch_add(1, Ordering::Relaxed);
    }

    pub fn counters(&self) -> CacheCounters {
        CacheCounters {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            forgets: self.forgets.load(Ordering::Relaxed),
            collisions: self.collisions.load(Ordering::Relaxed),
            evictions: self.evictions.load(Ordering::Relaxed),
        }
    }
}

/// Seen-count per functional hash.
#[derive(Debug, Default)]
pub struct Tabulist {
    counts: Mutex<HashMap<u64, u64>>,
    total: AtomicU64,
}

impl Tabulist {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self, key: FunctionalHash) -> u64 {
        self.counts.lock().get(&key.0).copied().unwrap_or(0)
    }

    pub fn increment(&self, key: FunctionalHash) -> u64 {
        self.total.fetch_add(1, Ordering::Relaxed);
        let mut counts = self.counts.lock();
        let c = counts.entry(key.0).or_insert(0);
        *c += 1;
        *c
    }

    /// Sum of all counts.
    pub fn total(&self) -> u64 {
        self.total.load(Ordering::Relaxed)
    }

    pub fn distinct(&self) -> usize {
        self.counts.lock().len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(f: f64) -> FitnessRecord {
        FitnessRecord::single(f, 1.0)
    }

    #[test]
    fn lookup_counts_and_insert_keeps_first() {
        let cache = Cache::new(4);
        let k = FunctionalHash(7);
        assert_eq!(cache.lookup(k), None);
        assert_eq!(cache.insert_if_absent(k, rec(0.5)), rec(0.5));
        assert_eq!(cache.insert_if_absent(k, rec(0.9)), rec(0.5));
        assert_eq!(cache.lookup(k), Some(rec(0.5)));
        let c = cache.counters();
        assert_eq!((c.hits, c.misses), (1, 1));
    }

    #[test]
    fn evicts_least_recently_inserted() {
        let cache = Cache::new(3);
        for k in 0..3 {
            cache.insert_if_absent(FunctionalHash(k), rec(k as f64));
        }
        // Reading does not refresh insertion order.
        cache.lookup(FunctionalHash(0));
        cache.insert_if_absent(FunctionalHash(3), rec(3.0));
        assert_eq!(cache.len(), 3);
        assert_eq!(cache.get(FunctionalHash(0)), None);
        assert!(cache.get(FunctionalHash(1)).is_some());
        assert_eq!(cache.counters().evictions, 1);
    }

    #[test]
    fn forgotten_keys_do_not_shadow_eviction_order() {
        let cache = Cache::new(2);
        cache.insert_if_absent(FunctionalHash(1), rec(1.0));
        cache.insert_if_absent(FunctionalHash(2), rec(2.0));
        assert!(cache.forget(FunctionalHash(1)));
        cache.insert_if_absent(FunctionalHash(1), rec(1.5));
        cache.insert_if_absent(FunctionalHash(3), rec(3.0));
        // 2 is now the oldest live insertion.
        assert_eq!(cache.get(FunctionalHash(2)), None);
        assert_eq!(cache.get(FunctionalHash(1)), Some(rec(1.5)));
        for k in 10..1000 {
            cache.insert_if_absent(FunctionalHash(k), rec(0.0));
            cache.forget(FunctionalHash(k - 1));
            assert!(cache.len() <= 2);
        }
    }

    #[test]
    fn aggregate_is_running_mean_capped() {
        let cache = Cache::new(10);
        let k = FunctionalHash(1);
        let xs = [0.2, 0.4, 0.9, 0.1];
        let mut last = rec(0.0);
        for &x in &xs {
            last = cache.aggregate(k, rec(x), 3);
        }
        assert_eq!(last.evals, 3);
        assert!((last.fitness - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tabulist_counts() {
        let t = Tabulist::new();
        assert_eq!(t.count(FunctionalHash(3)), 0);
        t.increment(FunctionalHash(3));
        t.increment(FunctionalHash(3));
        t.increment(FunctionalHash(4));
        assert_eq!(t.count(FunctionalHash(3)), 2);
        assert_eq!(t.total(), 3);
        assert_eq!(t.distinct(), 2);
    }
}
