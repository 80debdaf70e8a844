//! Countermeasure layer: randomized cache flushing, proportional random
//! delays, and data-independent table access, wrapped around the cipher as a
//! stream-encryption pipeline.
//!
//! The flush timer counts simulated cycles, not wall time: a deadline is
//! drawn uniformly from a configured range, and once the cache's elapsed
//! cycle counter passes it the cache is flushed and the deadline redrawn.
//! The timer is checked after every table access, so flushes can fire in the
//! middle of a round.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aes::{AccessMode, Aes128, TableObserver};
use crate::cache::Cache;
use crate::{Error, Result};

pub const BLOCK: usize = 16;

#[derive(Clone, Copy, PartialEq, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcfConfig {
    /// Flush countdown redraw range, in cycles.
    pub flush_timer_min: u64,
    pub flush_timer_max: u64,
    /// Delay coefficient: a chunk that took T cycles is followed by a pause
    /// of about `delay_alpha * T` cycles.
    pub delay_alpha: f64,
    /// Bytes per processed chunk; positive multiple of 16.
    pub chunk_size: usize,
    pub access_mode: AccessMode,
    pub flush_enabled: bool,
    pub delays_enabled: bool,
    pub rng_seed: u64,
}

impl Default for DcfConfig {
    fn default() -> Self {
        DcfConfig {
            flush_timer_min: 500,
            flush_timer_max: 2000,
            delay_alpha: 1.0,
            chunk_size: 16,
            access_mode: AccessMode::TTable,
            flush_enabled: true,
            delays_enabled: true,
            rng_seed: 0xdcf,
        }
    }
}

impl DcfConfig {
    /// Both countermeasures off; timing equals the bare cipher over the cache.
    pub fn disabled(access_mode: AccessMode) -> Self {
        DcfConfig {
            access_mode,
            flush_enabled: false,
            delays_enabled: false,
            ..DcfConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.flush_timer_min == 0 || self.flush_timer_min > self.flush_timer_max {
            return Err(Error::InvalidDcfConfig(format!(
                "flush timer range [{}, {}] must satisfy 0 < min <= max",
                self.flush_timer_min, self.flush_timer_max
            )));
        }
        if !self.delay_alpha.is_finite() || self.delay_alpha < 0.0 {
            return Err(Error::InvalidDcfConfig(format!(
                "delay_alpha {} must be finite and non-negative",
                self.delay_alpha
            )));
        }
        if self.chunk_size == 0 || self.chunk_size % BLOCK != 0 {
            return Err(Error::InvalidDcfConfig(format!(
                "chunk_size {} must be a positive multiple of {BLOCK}",
                self.chunk_size
            )));
        }
        Ok(())
    }
}

/// Uniform draw from the configured flush countdown range.
pub fn next_flush_deadline(cfg: &DcfConfig, rng: &mut impl Rng) -> u64 {
    rng.gen_range(cfg.flush_timer_min..=cfg.flush_timer_max)
}

/// Delay proportional to the time just spent: `alpha * t_chunk * u` rounded
/// down, with `u` uniform in `[0.5, 1.5)`. Rounding down keeps the draw
/// strictly inside the half-open jitter range.
pub fn random_delay(t_chunk: u64, cfg: &DcfConfig, rng: &mut impl Rng) -> u64 {
    let u: f64 = rng.gen_range(0.5..1.5);
    (cfg.delay_alpha * t_chunk as f64 * u) as u64
}

/// Reads every entry of `table` in ascending order, reporting each to the
/// observer, and returns `table[index]`. The observed address trace is
/// identical for every index.
pub fn full_scan_lookup<T: Copy, O>(
    table: &[T],
    base: u64,
    width: u32,
    index: usize,
    obs: &mut O,
) -> Result<T>
where
    O: TableObserver + ?Sized,
{
    if index >= table.len() {
        return Err(Error::IndexOutOfRange {
            index,
            len: table.len(),
        });
    }
    let mut picked = table[0];
    for (i, &entry) in table.iter().enumerate() {
        obs.table_read(base, i, width);
        if i == index {
            picked = entry;
        }
    }
    Ok(picked)
}

/// Receives one record per table lookup while a pipeline runs; used by the
/// analysis instrumentation.
pub trait LookupTap {
    /// `fetch_cycles`: what the cache charged for this lookup.
    /// `elapsed_after`: the cache's elapsed cycle counter right after it.
    fn lookup(&mut self, fetch_cycles: u64, elapsed_after: u64);
}

/// Tap that records nothing.
pub struct NoTap;

impl LookupTap for NoTap {
    fn lookup(&mut self, _fetch_cycles: u64, _elapsed_after: u64) {}
}

/// One encrypted block and what it cost.
#[derive(Clone, Copy, Debug)]
pub struct BlockOutcome {
    pub ciphertext: [u8; 16],
    /// Cycles spent on this block's table accesses (delays excluded).
    pub cycles: u64,
    /// Flushes fired while the block was being processed.
    pub flushes: u32,
}

/// Stream-encryption state that survives across blocks: the cipher, the
/// flush deadline and the RNG driving both countermeasures. The cache is
/// passed into each call so callers control its lifetime.
pub struct DcfPipeline {
    cfg: DcfConfig,
    cipher: Aes128,
    rng: ChaCha8Rng,
    /// Absolute elapsed-cycle value at which the next flush fires; armed on
    /// first use.
    deadline: Option<u64>,
    flush_offsets: Vec<u64>,
}

impl DcfPipeline {
    pub fn new(cfg: DcfConfig, key: &[u8]) -> Result<Self> {
        cfg.validate()?;
        Ok(DcfPipeline {
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            cipher: Aes128::new(key)?,
            cfg,
            deadline: None,
            flush_offsets: Vec::new(),
        })
    }

    pub fn config(&self) -> &DcfConfig {
        &self.cfg
    }

    /// Elapsed-cycle offsets at which flushes have fired so far.
    pub fn flush_offsets(&self) -> &[u64] {
        &self.flush_offsets
    }

    pub fn encrypt_block(&mut self, cache: &mut Cache, pt: &[u8; 16]) -> BlockOutcome {
        self.encrypt_block_tapped(cache, pt, &mut NoTap)
    }

    pub fn encrypt_block_tapped<T>(
        &mut self,
        cache: &mut Cache,
        pt: &[u8; 16],
        tap: &mut T,
    ) -> BlockOutcome
    where
        T: LookupTap + ?Sized,
    {
        let start = cache.snapshot().elapsed_cycles;
        let deadline = self
            .deadline
            .get_or_insert_with(|| start + next_flush_deadline(&self.cfg, &mut self.rng));
        let flushes;
        let ciphertext;
        {
            let mut guard = Guard {
                cache,
                cfg: &self.cfg,
                rng: &mut self.rng,
                deadline,
                flush_offsets: &mut self.flush_offsets,
                flushes: 0,
                tap,
            };
            ciphertext = self
                .cipher
                .encrypt_block(pt, self.cfg.access_mode, &mut guard);
            flushes = guard.flushes;
        }
        BlockOutcome {
            ciphertext,
            cycles: cache.snapshot().elapsed_cycles - start,
            flushes,
        }
    }

    /// Charges the post-chunk delay (if enabled) and runs the flush check on
    /// it. Returns (delay cycles, flushes fired).
    pub fn chunk_delay(&mut self, cache: &mut Cache, chunk_cycles: u64) -> (u64, u32) {
        if !self.cfg.delays_enabled {
            return (0, 0);
        }
        let delay = random_delay(chunk_cycles, &self.cfg, &mut self.rng);
        cache.charge_delay(delay);
        let mut flushes = 0;
        if self.cfg.flush_enabled {
            if let Some(deadline) = self.deadline.as_mut() {
                let elapsed = cache.snapshot().elapsed_cycles;
                if elapsed >= *deadline {
                    cache.flush();
                    self.flush_offsets.push(elapsed);
                    *deadline = elapsed + next_flush_deadline(&self.cfg, &mut self.rng);
                    flushes = 1;
                }
            }
        }
        (delay, flushes)
    }
}

struct Guard<'a, T: LookupTap + ?Sized> {
    cache: &'a mut Cache,
    cfg: &'a DcfConfig,
    rng: &'a mut ChaCha8Rng,
    deadline: &'a mut u64,
    flush_offsets: &'a mut Vec<u64>,
    flushes: u32,
    tap: &'a mut T,
}

impl<T: LookupTap + ?Sized> TableObserver for Guard<'_, T> {
    fn table_read(&mut self, base: u64, index: usize, width: u32) {
        let outcome = self.cache.access(base + index as u64 * width as u64, width);
        let elapsed = self.cache.snapshot().elapsed_cycles;
        self.tap.lookup(outcome.cycles, elapsed);
        if self.cfg.flush_enabled && elapsed >= *self.deadline {
            self.cache.flush();
            self.flush_offsets.push(elapsed);
            self.flushes += 1;
            *self.deadline = elapsed + next_flush_deadline(self.cfg, self.rng);
        }
    }
}

/// Result of an [`encrypt_stream`] run: ciphertext plus the per-block timing
/// and flush logs.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct StreamOutput {
    pub ciphertext: Vec<u8>,
    /// Simulated cycles per block, delays excluded.
    pub block_cycles: Vec<u64>,
    /// Flushes fired during each block (chunk-boundary flushes are attributed
    /// to the block that closed the chunk).
    pub block_flushes: Vec<u32>,
    /// Elapsed-cycle offsets of every flush.
    pub flush_offsets: Vec<u64>,
}

/// Encrypts `plaintext` in ECB fashion, chunk by chunk, with the configured
/// countermeasures. The buffer is padded to a 16-byte boundary when needed
/// (pad byte = number of bytes added). ECB plus raw padding is fine for a
/// timing lab and unsuitable for protecting real data.
pub fn encrypt_stream(
    cfg: &DcfConfig,
    key: &[u8],
    plaintext: &[u8],
    cache: &mut Cache,
) -> Result<StreamOutput> {
    encrypt_stream_tapped(cfg, key, plaintext, cache, &mut NoTap)
}

/// [`encrypt_stream`] with a per-lookup instrumentation tap.
pub fn encrypt_stream_tapped<T>(
    cfg: &DcfConfig,
    key: &[u8],
    plaintext: &[u8],
    cache: &mut Cache,
    tap: &mut T,
) -> Result<StreamOutput>
where
    T: LookupTap + ?Sized,
{
    if plaintext.is_empty() {
        return Err(Error::EmptyInput);
    }
    let padded = pad_to_block(plaintext);
    let mut pipeline = DcfPipeline::new(*cfg, key)?;

    let mut ciphertext = Vec::with_capacity(padded.len());
    let mut block_cycles = Vec::with_capacity(padded.len() / BLOCK);
    let mut block_flushes = Vec::with_capacity(padded.len() / BLOCK);

    for chunk in padded.chunks(cfg.chunk_size) {
        let chunk_start = cache.snapshot().elapsed_cycles;
        for block in chunk.chunks_exact(BLOCK) {
            let block: &[u8; 16] = block.try_into().expect("exact chunk");
            let out = pipeline.encrypt_block_tapped(cache, block, &mut *tap);
            ciphertext.extend_from_slice(&out.ciphertext);
            block_cycles.push(out.cycles);
            block_flushes.push(out.flushes);
        }
        let chunk_cycles = cache.snapshot().elapsed_cycles - chunk_start;
        let (_, boundary_flushes) = pipeline.chunk_delay(cache, chunk_cycles);
        if let Some(last) = block_flushes.last_mut() {
            *last += boundary_flushes;
        }
    }

    Ok(StreamOutput {
        ciphertext,
        block_cycles,
        block_flushes,
        flush_offsets: pipeline.flush_offsets,
    })
}

/// Pads to a 16-byte boundary; buffers already on a boundary are unchanged.
pub fn pad_to_block(data: &[u8]) -> Vec<u8> {
    let mut padded = data.to_vec();
    let rem = padded.len() % BLOCK;
    if rem != 0 {
        let fill = (BLOCK - rem) as u8;
        padded.resize(padded.len() + fill as usize, fill);
    }
    padded
}
