//! Deterministic set-associative cache simulator.
//!
//! This is the lab's timing oracle: every observed table read is charged a
//! hit or miss cost in simulated cycles, so identical access sequences always
//! produce identical timings. There is no wall clock anywhere.

use crate::aes::TableObserver;
use crate::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplacementPolicy {
    Lru,
}

#[derive(Clone, Copy, PartialEq, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    /// Line size in bytes; power of two.
    pub line_size: u32,
    /// Number of sets; power of two.
    pub num_sets: u32,
    /// Ways per set.
    pub associativity: u32,
    /// Cycles charged per line hit.
    pub hit_cycles: u64,
    /// Cycles charged per line miss.
    pub miss_cycles: u64,
    pub replacement: ReplacementPolicy,
}

impl Default for CacheConfig {
    /// An 8 KB direct-mapped cache with entry-granular lines. One 4-byte
    /// line per round-table entry means residency resolves the full lookup
    /// index rather than a line-sized group of indices. The tables fit
    /// without aliasing each other, so the only contention is against the
    /// victim's own working data, which is exactly the index-specific
    /// eviction pattern the timing channel rides on.
    fn default() -> Self {
        CacheConfig {
            line_size: 4,
            num_sets: 2048,
            associativity: 1,
            hit_cycles: 3,
            miss_cycles: 100,
            replacement: ReplacementPolicy::Lru,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<()> {
        if self.line_size == 0 || !self.line_size.is_power_of_two() {
            return Err(Error::InvalidCacheConfig(format!(
                "line_size {} must be a nonzero power of two",
                self.line_size
            )));
        }
        if self.num_sets == 0 || !self.num_sets.is_power_of_two() {
            return Err(Error::InvalidCacheConfig(format!(
                "num_sets {} must be a nonzero power of two",
                self.num_sets
            )));
        }
        if self.associativity == 0 {
            return Err(Error::InvalidCacheConfig(
                "associativity must be at least 1".into(),
            ));
        }
        if self.miss_cycles <= self.hit_cycles {
            return Err(Error::InvalidCacheConfig(format!(
                "miss_cycles {} must exceed hit_cycles {}",
                self.miss_cycles, self.hit_cycles
            )));
        }
        Ok(())
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.line_size as u64 * self.num_sets as u64 * self.associativity as u64
    }
}

#[derive(Clone, Copy, Default)]
struct Line {
    tag: u64,
    stamp: u64,
    valid: bool,
}

/// Counters at a point in simulated time.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, serde::Serialize)]
pub struct CacheSnapshot {
    pub hit_count: u64,
    pub miss_count: u64,
    /// Cycles injected via [`Cache::charge_delay`].
    pub delay_cycles: u64,
    pub elapsed_cycles: u64,
}

/// Outcome of a single access.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct AccessOutcome {
    pub hits: u32,
    pub misses: u32,
    pub cycles: u64,
}

/// Mutable cache state. Single-threaded by design; run independent
/// experiments on independent instances.
#[derive(Clone)]
pub struct Cache {
    cfg: CacheConfig,
    // flattened [set][way]
    lines: Vec<Line>,
    stamp: u64,
    hits: u64,
    misses: u64,
    delay: u64,
    elapsed: u64,
}

impl Cache {
    pub fn new(cfg: CacheConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Cache {
            cfg,
            lines: vec![Line::default(); (cfg.num_sets * cfg.associativity) as usize],
            stamp: 0,
            hits: 0,
            misses: 0,
            delay: 0,
            elapsed: 0,
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.cfg
    }

    /// Touches every line covered by `[addr, addr + width)`, charging the
    /// hit or miss cost per line.
    pub fn access(&mut self, addr: u64, width: u32) -> AccessOutcome {
        debug_assert!(width >= 1);
        let line_size = self.cfg.line_size as u64;
        let first = addr / line_size;
        let last = (addr + width.max(1) as u64 - 1) / line_size;
        let mut outcome = AccessOutcome {
            hits: 0,
            misses: 0,
            cycles: 0,
        };
        for line in first..=last {
            if self.touch_line(line) {
                outcome.hits += 1;
                outcome.cycles += self.cfg.hit_cycles;
            } else {
                outcome.misses += 1;
                outcome.cycles += self.cfg.miss_cycles;
            }
        }
        self.hits += outcome.hits as u64;
        self.misses += outcome.misses as u64;
        self.elapsed += outcome.cycles;
        outcome
    }

    /// Returns true on hit. On miss, inserts the line, evicting the least
    /// recently used way if the set is full.
    fn touch_line(&mut self, line_addr: u64) -> bool {
        let ways = self.cfg.associativity as usize;
        let set = (line_addr % self.cfg.num_sets as u64) as usize;
        let tag = line_addr / self.cfg.num_sets as u64;
        self.stamp += 1;
        let slots = &mut self.lines[set * ways..(set + 1) * ways];

        if let Some(hit) = slots.iter_mut().find(|l| l.valid && l.tag == tag) {
            hit.stamp = self.stamp;
            return true;
        }

        let victim = slots
            .iter_mut()
            .min_by_key(|l| if l.valid { l.stamp } else { 0 })
            .expect("at least one way");
        *victim = Line {
            tag,
            stamp: self.stamp,
            valid: true,
        };
        false
    }

    /// Empties every set. Counters and elapsed time are retained.
    pub fn flush(&mut self) {
        for line in &mut self.lines {
            line.valid = false;
        }
    }

    /// Adds `cycles` of pure delay to the elapsed time.
    pub fn charge_delay(&mut self, cycles: u64) {
        self.delay += cycles;
        self.elapsed += cycles;
    }

    pub fn snapshot(&self) -> CacheSnapshot {
        CacheSnapshot {
            hit_count: self.hits,
            miss_count: self.misses,
            delay_cycles: self.delay,
            elapsed_cycles: self.elapsed,
        }
    }

    pub fn resident_lines(&self) -> usize {
        self.lines.iter().filter(|l| l.valid).count()
    }
}

/// Observer that charges every reported table read to a cache.
pub struct CacheObserver<'a> {
    pub cache: &'a mut Cache,
}

impl TableObserver for CacheObserver<'_> {
    fn table_read(&mut self, base: u64, index: usize, width: u32) {
        self.cache.access(base + index as u64 * width as u64, width);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cache(num_sets: u32, ways: u32) -> Cache {
        Cache::new(CacheConfig {
            line_size: 64,
            num_sets,
            associativity: ways,
            ..CacheConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn cold_miss_then_hit() {
        let mut c = small_cache(4, 2);
        let first = c.access(0x1000, 4);
        assert_eq!((first.hits, first.misses), (0, 1));
        let second = c.access(0x1000, 4);
        assert_eq!((second.hits, second.misses), (1, 0));
        assert_eq!(
            c.snapshot(),
            CacheSnapshot {
                hit_count: 1,
                miss_count: 1,
                delay_cycles: 0,
                elapsed_cycles: 103,
            }
        );
    }

    #[test]
    fn direct_mapped_conflict_evicts() {
        // A and B share a set with different tags: A, B, A all miss.
        let mut c = small_cache(4, 1);
        let set_span = 4 * 64;
        let a = 0x0;
        let b = a + set_span;
        assert_eq!(c.access(a, 1).misses, 1);
        assert_eq!(c.access(b, 1).misses, 1);
        assert_eq!(c.access(a, 1).misses, 1);
    }

    #[test]
    fn straddling_access_touches_two_lines() {
        let mut c = small_cache(4, 2);
        let out = c.access(62, 4); // crosses the 64-byte boundary
        assert_eq!(out.misses, 2);
        assert_eq!(out.cycles, 200);
    }

    #[test]
    fn flush_forces_misses() {
        let mut c = small_cache(4, 2);
        c.access(0x40, 1);
        assert_eq!(c.access(0x40, 1).hits, 1);
        c.flush();
        assert_eq!(c.resident_lines(), 0);
        assert_eq!(c.access(0x40, 1).misses, 1);
        // counters survived the flush
        assert_eq!(c.snapshot().miss_count, 2);
    }

    #[test]
    fn flush_on_empty_cache_is_a_noop() {
        let mut c = small_cache(4, 2);
        let before = c.snapshot();
        c.flush();
        assert_eq!(c.snapshot(), before);
        assert_eq!(c.resident_lines(), 0);
    }

    #[test]
    fn flush_after_each_access_kills_the_hit_ratio() {
        let mut c = small_cache(4, 2);
        for _ in 0..3 {
            c.access(0x80, 1);
            c.flush();
        }
        let snap = c.snapshot();
        assert_eq!((snap.hit_count, snap.miss_count), (0, 3));
    }

    #[test]
    fn delay_accumulates() {
        let mut c = small_cache(4, 1);
        c.charge_delay(0);
        assert_eq!(c.snapshot().elapsed_cycles, 0);
        c.charge_delay(50);
        c.charge_delay(50);
        assert_eq!(c.snapshot().delay_cycles, 100);
        assert_eq!(c.snapshot().elapsed_cycles, 100);
    }

    #[test]
    fn elapsed_matches_counter_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut c = small_cache(8, 2);
        for _ in 0..2000 {
            if rng.gen_bool(0.1) {
                c.charge_delay(rng.gen_range(0..50));
            } else {
                c.access(rng.gen_range(0..4096), 1);
            }
        }
        let snap = c.snapshot();
        assert_eq!(
            snap.elapsed_cycles,
            snap.hit_count * 3 + snap.miss_count * 100 + snap.delay_cycles
        );
    }

    #[test]
    fn rejects_bad_configs() {
        for cfg in [
            CacheConfig {
                line_size: 48,
                ..CacheConfig::default()
            },
            CacheConfig {
                num_sets: 0,
                ..CacheConfig::default()
            },
            CacheConfig {
                associativity: 0,
                ..CacheConfig::default()
            },
            CacheConfig {
                hit_cycles: 100,
                miss_cycles: 100,
                ..CacheConfig::default()
            },
        ] {
            assert!(Cache::new(cfg).is_err(), "{cfg:?}");
        }
    }

    /// Straightforward recency-list LRU, kept structurally different from the
    /// stamp-based implementation above.
    struct ListLru {
        num_sets: u64,
        ways: usize,
        // most recent last
        sets: Vec<Vec<u64>>,
    }

    impl ListLru {
        fn new(num_sets: u64, ways: usize) -> Self {
            ListLru {
                num_sets,
                ways,
                sets: vec![Vec::new(); num_sets as usize],
            }
        }

        fn access(&mut self, line_addr: u64) -> bool {
            let set = (line_addr % self.num_sets) as usize;
            let tag = line_addr / self.num_sets;
            let residents = &mut self.sets[set];
            if let Some(pos) = residents.iter().position(|&t| t == tag) {
                residents.remove(pos);
                residents.push(tag);
                true
            } else {
                if residents.len() == self.ways {
                    residents.remove(0);
                }
                residents.push(tag);
                false
            }
        }
    }

    #[test]
    fn matches_list_lru_on_random_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut cache = small_cache(4, 2);
        let mut oracle = ListLru::new(4, 2);
        for i in 0..10_000 {
            let addr = rng.gen_range(0u64..2048);
            let got = cache.access(addr, 1).hits == 1;
            let want = oracle.access(addr / 64);
            assert_eq!(got, want, "access {i} addr {addr:#x}");
        }
    }

    proptest! {
        #[test]
        fn capacity_and_monotonicity(addrs in proptest::collection::vec(0u64..8192, 1..300)) {
            let mut c = small_cache(4, 2);
            let mut last_elapsed = 0;
            for addr in addrs {
                c.access(addr, 1);
                let snap = c.snapshot();
                prop_assert!(snap.elapsed_cycles >= last_elapsed);
                last_elapsed = snap.elapsed_cycles;
                prop_assert!(c.resident_lines() <= 8);
            }
        }
    }

    #[test]
    fn determinism() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut c = small_cache(16, 4);
            for _ in 0..5000 {
                c.access(rng.gen_range(0..65536), rng.gen_range(1..8));
            }
            c.snapshot()
        };
        assert_eq!(run(), run());
    }
}
