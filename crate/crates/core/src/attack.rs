//! First-round cache-timing key recovery.
//!
//! The attacker times many encryptions of random inputs, buckets total time
//! by the value of one input byte, and compares the resulting profile against
//! a reference profile collected with a known key on identical software and
//! cache. Timing that depends only on `key[i] ^ input[i]` makes the attack
//! profile a XOR-shifted copy of the reference, so the shift is the key byte.

use std::io::Write;

use rand::Rng;

use crate::aes::{AccessMode, Aes128};
use crate::cache::{Cache, CacheConfig, CacheObserver};
use crate::dcf::{DcfConfig, DcfPipeline};
use crate::{Error, Result};

/// Encryptions run (and discarded) before sampling starts, so measurements
/// see a settled cache rather than cold-start noise.
pub const WARMUP_ENCRYPTIONS: usize = 32;

pub const MIN_SAMPLES: usize = 256;

/// One timed encryption.
#[derive(Clone, Copy, Debug)]
pub struct TimingSample {
    pub input: [u8; 16],
    pub total_cycles: u64,
}

/// Anything that can be timed encrypting attacker-chosen blocks.
pub trait Victim {
    /// Encrypts `input` once and returns the simulated cycles it took.
    fn time_encryption(&mut self, input: &[u8; 16]) -> u64;
}

/// Fixed-address reads the victim performs around every encryption call:
/// its stack, the state buffers, I/O and bookkeeping data. Table lines whose
/// sets this working set covers get evicted between encryptions while the
/// rest survive, which is what makes the lookup index visible in the total
/// time at all. Without any competing resident data, table aliasing is
/// set-symmetric and the timing profiles stay flat.
#[derive(Clone, Debug)]
pub struct VictimWorkload {
    reads: Vec<u64>,
    width: u32,
}

impl VictimWorkload {
    /// The default landscape: [`Self::scattered`] with 24 lines per table's
    /// address range.
    pub fn typical() -> Self {
        Self::scattered(24)
    }

    /// A fixed pattern of reads inside a 64 KB region starting at 0x40000,
    /// placed so that `per_table` scattered lines alias each round table's
    /// address range (plus a handful aliasing the byte tables). The scatter
    /// comes from a constant splitmix64 stream, so every run sees the same
    /// landscape.
    pub fn scattered(per_table: usize) -> Self {
        let region = 0x40000u64;
        let mut z: u64 = 0x5ca7_7e4e_d1a5;
        let mut step = || {
            z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut x = z;
            x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            x ^ (x >> 31)
        };
        let mut reads = Vec::new();
        // per table: `per_table` distinct line offsets within its 1 KB span
        for table in 0..4u64 {
            let mut offsets = std::collections::BTreeSet::new();
            while offsets.len() < per_table {
                offsets.insert(step() % 256);
            }
            for off in offsets {
                reads.push(region + table * 1024 + off * 4);
            }
        }
        // and a few lines aliasing the byte tables behind them
        for byte_table in 0..2u64 {
            for _ in 0..4 {
                let off = step() % 64;
                reads.push(region + 4096 + byte_table * 256 + off * 4);
            }
        }
        VictimWorkload { reads, width: 4 }
    }

    /// No surrounding data traffic; only the cipher's own table reads touch
    /// the cache.
    pub fn none() -> Self {
        VictimWorkload {
            reads: Vec::new(),
            width: 4,
        }
    }

    pub fn charge(&self, cache: &mut Cache) {
        for &addr in &self.reads {
            cache.access(addr, self.width);
        }
    }
}

/// The vulnerable deployment: consecutive encryptions share one cache with no
/// flushes in between, and the victim's own working-set reads give the cache
/// an index-specific eviction landscape.
pub struct WarmCacheVictim {
    cipher: Aes128,
    mode: AccessMode,
    cache: Cache,
    workload: VictimWorkload,
}

impl WarmCacheVictim {
    pub fn new(key: &[u8], mode: AccessMode, cache_cfg: CacheConfig) -> Result<Self> {
        Self::with_workload(key, mode, cache_cfg, VictimWorkload::typical())
    }

    pub fn with_workload(
        key: &[u8],
        mode: AccessMode,
        cache_cfg: CacheConfig,
        workload: VictimWorkload,
    ) -> Result<Self> {
        Ok(WarmCacheVictim {
            cipher: Aes128::new(key)?,
            mode,
            cache: Cache::new(cache_cfg)?,
            workload,
        })
    }
}

impl Victim for WarmCacheVictim {
    fn time_encryption(&mut self, input: &[u8; 16]) -> u64 {
        // the victim's surrounding activity runs between calls; the attacker
        // times only the encryption itself
        self.workload.charge(&mut self.cache);
        let before = self.cache.snapshot().elapsed_cycles;
        self.cipher.encrypt_block(
            input,
            self.mode,
            &mut CacheObserver {
                cache: &mut self.cache,
            },
        );
        self.cache.snapshot().elapsed_cycles - before
    }
}

/// A victim running behind the countermeasure pipeline, with the same
/// surrounding working-set traffic as the unprotected one. Each sampled block
/// is processed as a single-block chunk, so the measured time includes any
/// injected delay, and the flush timer keeps running across samples.
pub struct GuardedVictim {
    pipeline: DcfPipeline,
    cache: Cache,
    workload: VictimWorkload,
}

impl GuardedVictim {
    pub fn new(key: &[u8], dcf: DcfConfig, cache_cfg: CacheConfig) -> Result<Self> {
        Ok(GuardedVictim {
            pipeline: DcfPipeline::new(dcf, key)?,
            cache: Cache::new(cache_cfg)?,
            workload: VictimWorkload::typical(),
        })
    }
}

impl Victim for GuardedVictim {
    fn time_encryption(&mut self, input: &[u8; 16]) -> u64 {
        self.workload.charge(&mut self.cache);
        let before = self.cache.snapshot().elapsed_cycles;
        let out = self.pipeline.encrypt_block(&mut self.cache, input);
        self.pipeline.chunk_delay(&mut self.cache, out.cycles);
        self.cache.snapshot().elapsed_cycles - before
    }
}

/// Times `sample_count` encryptions of uniformly random inputs. The victim's
/// cache state carries over from one encryption to the next; a fixed warm-up
/// sweep runs first and is not recorded.
pub fn collect_samples(
    victim: &mut dyn Victim,
    sample_count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<TimingSample>> {
    if sample_count < MIN_SAMPLES {
        return Err(Error::SampleCountTooLow {
            got: sample_count,
            min: MIN_SAMPLES,
        });
    }
    for i in 0..WARMUP_ENCRYPTIONS {
        // sweep inputs spanning all byte values, independent of the RNG
        let block: [u8; 16] = core::array::from_fn(|j| (i * 16 + j) as u8);
        victim.time_encryption(&block);
    }
    let mut samples = Vec::with_capacity(sample_count);
    for _ in 0..sample_count {
        let input: [u8; 16] = rng.gen();
        let total_cycles = victim.time_encryption(&input);
        samples.push(TimingSample {
            input,
            total_cycles,
        });
    }
    Ok(samples)
}

/// Per-position table of total timings bucketed by one byte of the input
/// (XORed with a known key byte for reference profiles).
#[derive(Clone, Debug)]
pub struct TimingProfile {
    pub position: usize,
    pub sum_cycles: [u64; 256],
    pub count: [u32; 256],
}

impl TimingProfile {
    pub fn mean(&self, value: u8) -> f64 {
        self.sum_cycles[value as usize] as f64 / self.count[value as usize] as f64
    }

    pub fn means(&self) -> [f64; 256] {
        core::array::from_fn(|v| self.mean(v as u8))
    }
}

/// Buckets sample timings by `input[position]`.
pub fn build_profile(samples: &[TimingSample], position: usize) -> Result<TimingProfile> {
    build_profile_keyed(samples, position, 0)
}

/// Buckets sample timings by `input[position] ^ key_byte`. With the victim's
/// own key byte this re-indexes the profile by the first-round lookup index,
/// which is how reference profiles are stored.
pub fn build_profile_keyed(
    samples: &[TimingSample],
    position: usize,
    key_byte: u8,
) -> Result<TimingProfile> {
    assert!(position < 16, "byte position out of range");
    let mut profile = TimingProfile {
        position,
        sum_cycles: [0; 256],
        count: [0; 256],
    };
    for s in samples {
        let bucket = (s.input[position] ^ key_byte) as usize;
        profile.sum_cycles[bucket] += s.total_cycles;
        profile.count[bucket] += 1;
    }
    if let Some(empty) = profile.count.iter().position(|&c| c == 0) {
        return Err(Error::InsufficientSamples {
            position,
            value: empty as u8,
        });
    }
    Ok(profile)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Compare the locations of the two profile maxima.
    Max,
    /// Pick the XOR shift maximizing the Pearson correlation between the two
    /// profiles.
    Correlation,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Max => "max",
            Method::Correlation => "correlation",
        })
    }
}

/// A single recovered byte plus the full candidate score vector.
#[derive(Clone, Debug)]
pub struct ByteRecovery {
    pub byte: u8,
    pub scores: Vec<f64>,
}

/// Recovers one key byte from an attack profile and a reference profile for
/// the same position. A non-unique best candidate is surfaced as
/// [`Error::AmbiguousMaximum`] rather than silently broken: flat profiles,
/// i.e. protected victims, must not masquerade as recoveries.
pub fn recover_key_byte(
    attack: &TimingProfile,
    reference: &TimingProfile,
    method: Method,
) -> Result<ByteRecovery> {
    let attack_means = attack.means();
    let reference_means = reference.means();
    let scores: Vec<f64> = match method {
        Method::Max => {
            let s_star = unique_argmax(&reference_means)?;
            (0..256).map(|c| attack_means[c ^ s_star]).collect()
        }
        Method::Correlation => (0..256)
            .map(|c| {
                let shifted: Vec<f64> = (0..256).map(|v| reference_means[v ^ c]).collect();
                pearson(&attack_means, &shifted)
            })
            .collect(),
    };
    let best = unique_argmax(&scores)?;
    Ok(ByteRecovery {
        byte: best as u8,
        scores,
    })
}

fn unique_argmax(values: &[f64]) -> Result<usize> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<u8> = values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == max)
        .map(|(i, _)| i as u8)
        .collect();
    match tied.as_slice() {
        [single] => Ok(*single as usize),
        _ => Err(Error::AmbiguousMaximum(tied)),
    }
}

/// Pearson correlation; 0.0 when either side has no variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// What happened at one byte position.
#[derive(Clone, Debug)]
pub enum PositionOutcome {
    Recovered { byte: u8, score: f64 },
    Ambiguous { tied: Vec<u8> },
}

/// Full key-recovery result. `recovered_key` breaks ambiguous positions
/// toward the lowest tied value so it always holds 16 bytes; `positions`
/// records which bytes were genuine recoveries.
#[derive(Clone, Debug)]
pub struct AttackResult {
    pub method: Method,
    pub recovered_key: [u8; 16],
    pub positions: Vec<(usize, PositionOutcome)>,
    pub scores: Vec<(usize, Vec<f64>)>,
}

impl AttackResult {
    /// Positions recovered unambiguously and matching the true key.
    pub fn bytes_correct(&self, true_key: &[u8; 16]) -> usize {
        self.positions
            .iter()
            .filter(|(pos, outcome)| {
                matches!(outcome, PositionOutcome::Recovered { byte, .. } if *byte == true_key[*pos])
            })
            .count()
    }
}

/// Runs [`recover_key_byte`] at each requested position.
pub fn recover_key(
    attack_samples: &[TimingSample],
    reference_profiles: &[TimingProfile],
    method: Method,
) -> Result<AttackResult> {
    let mut recovered_key = [0u8; 16];
    let mut positions = Vec::with_capacity(reference_profiles.len());
    let mut scores = Vec::with_capacity(reference_profiles.len());
    for reference in reference_profiles {
        let position = reference.position;
        let attack = build_profile(attack_samples, position)?;
        match recover_key_byte(&attack, reference, method) {
            Ok(r) => {
                recovered_key[position] = r.byte;
                let score = r.scores[r.byte as usize];
                positions.push((position, PositionOutcome::Recovered { byte: r.byte, score }));
                scores.push((position, r.scores));
            }
            Err(Error::AmbiguousMaximum(tied)) => {
                recovered_key[position] = tied.first().copied().unwrap_or(0);
                positions.push((position, PositionOutcome::Ambiguous { tied }));
                scores.push((position, Vec::new()));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(AttackResult {
        method,
        recovered_key,
        positions,
        scores,
    })
}

/// Builds reference profiles for the given positions from a profiling run
/// with a known key, stored re-indexed by the first-round lookup index.
pub fn build_reference_profiles(
    samples: &[TimingSample],
    known_key: &[u8; 16],
    positions: &[usize],
) -> Result<Vec<TimingProfile>> {
    positions
        .iter()
        .map(|&p| build_profile_keyed(samples, p, known_key[p]))
        .collect()
}

/// CSV dump: one row per (position, value).
pub fn write_profiles_csv<W: Write>(profiles: &[TimingProfile], mut w: W) -> std::io::Result<()> {
    writeln!(w, "position,value,count,mean")?;
    for p in profiles {
        for v in 0..256 {
            writeln!(
                w,
                "{},{},{},{}",
                p.position,
                v,
                p.count[v],
                p.mean(v as u8)
            )?;
        }
    }
    Ok(())
}
