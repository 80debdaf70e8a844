//! Experiment statistics: timing heatmaps over a (key, input) grid and
//! constancy reports for a single instrumented run.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attack::VictimWorkload;
use crate::cache::{Cache, CacheConfig};
use crate::dcf::{DcfConfig, DcfPipeline, LookupTap, BLOCK};
use crate::{Error, Result};

/// A grid of (key, input) cells, each timed over `reps` repeated encryptions
/// on its own cache. Rows are keys, columns are inputs.
#[derive(Clone, Copy, PartialEq, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapSpec {
    pub grid_keys: u32,
    pub grid_inputs: u32,
    pub reps: u32,
    /// Edge length of each rendered cell, in pixels.
    pub block_pixels: u32,
}

impl Default for HeatmapSpec {
    fn default() -> Self {
        HeatmapSpec {
            grid_keys: 32,
            grid_inputs: 32,
            reps: 16,
            block_pixels: 4,
        }
    }
}

impl HeatmapSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid_keys == 0 || self.grid_inputs == 0 {
            return Err(Error::InvalidSpec(
                "heatmap grid must have at least one row and one column".into(),
            ));
        }
        if self.reps == 0 || self.block_pixels == 0 {
            return Err(Error::InvalidSpec(
                "heatmap reps and block_pixels must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministic cell enumeration: cell index `i` maps to 16 bytes of
/// `(i mod 256)` spread by position via XOR. Which keys and inputs populate
/// the grid is arbitrary; this choice is just easy to reproduce.
pub fn cell_bytes(index: u32) -> [u8; 16] {
    core::array::from_fn(|b| (index % 256) as u8 ^ b as u8)
}

#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct CellStats {
    pub key_index: u32,
    pub input_index: u32,
    pub min_cycles: u64,
    pub max_cycles: u64,
    pub mean_cycles: f64,
    pub stddev_cycles: f64,
}

/// Rendered heatmap plus the per-cell statistics behind it.
#[derive(Clone, Debug)]
pub struct Heatmap {
    pub spec: HeatmapSpec,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    /// Row-major grayscale pixels, one byte each.
    pub pixels: Vec<u8>,
    pub cells: Vec<CellStats>,
}

/// Times every grid cell under the given victim configuration. Each cell gets
/// a fresh cache and an RNG stream derived from (seed, cell), so runs are
/// reproducible cell by cell. The victim's working-set reads run between
/// repetitions, outside the timed window, like any measured process.
pub fn render_heatmap(
    spec: &HeatmapSpec,
    dcf: &DcfConfig,
    cache_cfg: &CacheConfig,
    seed: u64,
) -> Result<Heatmap> {
    spec.validate()?;
    dcf.validate()?;
    cache_cfg.validate()?;

    let workload = VictimWorkload::typical();
    let mut cells = Vec::with_capacity((spec.grid_keys * spec.grid_inputs) as usize);
    for ki in 0..spec.grid_keys {
        let key = cell_bytes(ki);
        for ij in 0..spec.grid_inputs {
            let input = cell_bytes(ij);
            let cell_cfg = DcfConfig {
                rng_seed: mix_seed(seed, ((ki as u64) << 32) | ij as u64),
                ..*dcf
            };
            let mut cache = Cache::new(*cache_cfg)?;
            let mut pipeline = DcfPipeline::new(cell_cfg, &key)?;
            let mut cycles = Vec::with_capacity(spec.reps as usize);
            for _ in 0..spec.reps {
                workload.charge(&mut cache);
                let before = cache.snapshot().elapsed_cycles;
                let out = pipeline.encrypt_block(&mut cache, &input);
                pipeline.chunk_delay(&mut cache, out.cycles);
                cycles.push(cache.snapshot().elapsed_cycles - before);
            }
            cells.push(cell_from_cycles(ki, ij, &cycles));
        }
    }

    let pixels = rasterize(spec, &cells);
    Ok(Heatmap {
        spec: *spec,
        seed,
        width: spec.grid_inputs * spec.block_pixels,
        height: spec.grid_keys * spec.block_pixels,
        pixels,
        cells,
    })
}

fn cell_from_cycles(key_index: u32, input_index: u32, cycles: &[u64]) -> CellStats {
    let n = cycles.len() as f64;
    let mean = cycles.iter().sum::<u64>() as f64 / n;
    let var = cycles
        .iter()
        .map(|&c| (c as f64 - mean) * (c as f64 - mean))
        .sum::<f64>()
        / n;
    CellStats {
        key_index,
        input_index,
        min_cycles: *cycles.iter().min().unwrap(),
        max_cycles: *cycles.iter().max().unwrap(),
        mean_cycles: mean,
        stddev_cycles: var.sqrt(),
    }
}

/// Gray level per cell: the quantile midrank of its mean among all cell
/// means, scaled to 0..=255. Equal means always get equal gray, and gray is
/// monotone in the mean.
fn rasterize(spec: &HeatmapSpec, cells: &[CellStats]) -> Vec<u8> {
    let mut sorted: Vec<f64> = cells.iter().map(|c| c.mean_cycles).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("cycle means are finite"));
    let n = sorted.len();

    let gray = |mean: f64| -> u8 {
        if n == 1 {
            return 128;
        }
        let lo = sorted.partition_point(|&x| x < mean);
        let hi = sorted.partition_point(|&x| x <= mean);
        let midrank = (lo + hi.saturating_sub(1)) as f64 / 2.0;
        (midrank / (n - 1) as f64 * 255.0).round() as u8
    };

    let bp = spec.block_pixels as usize;
    let width = spec.grid_inputs as usize * bp;
    let height = spec.grid_keys as usize * bp;
    let mut pixels = vec![0u8; width * height];
    for cell in cells {
        let g = gray(cell.mean_cycles);
        let row0 = cell.key_index as usize * bp;
        let col0 = cell.input_index as usize * bp;
        for r in 0..bp {
            let offset = (row0 + r) * width + col0;
            pixels[offset..offset + bp].fill(g);
        }
    }
    pixels
}

fn mix_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Heatmap {
    /// Binary PGM (P5, maxval 255).
    pub fn write_pgm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)
    }

    /// One CSV row per cell.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "key_index,input_index,min,max,mean,stddev")?;
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                c.key_index, c.input_index, c.min_cycles, c.max_cycles, c.mean_cycles, c.stddev_cycles
            )?;
        }
        Ok(())
    }

    /// JSON sidecar with the spec, seed, victim/cache configuration and a
    /// hash over all of it.
    pub fn write_metadata<W: Write>(
        &self,
        dcf: &DcfConfig,
        cache_cfg: &CacheConfig,
        mut w: W,
    ) -> std::io::Result<()> {
        #[derive(serde::Serialize)]
        struct Metadata<'a> {
            spec: &'a HeatmapSpec,
            dcf: &'a DcfConfig,
            cache: &'a CacheConfig,
            seed: u64,
            cell_rule: &'static str,
            config_hash: String,
        }
        let mut meta = Metadata {
            spec: &self.spec,
            dcf,
            cache: cache_cfg,
            seed: self.seed,
            cell_rule: "cell i -> 16 bytes of (i mod 256) XOR byte position",
            config_hash: String::new(),
        };
        let unhashed = serde_json::to_string(&meta).expect("metadata serializes");
        meta.config_hash = format!("{:016x}", fnv1a64(unhashed.as_bytes()));
        let body = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        w.write_all(body.as_bytes())?;
        w.write_all(b"\n")
    }
}

fn fnv1a64(data: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in data {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Series and summary statistics from one instrumented stream run.
///
/// The fetch series is what the cache charged per lookup; the instruction
/// series is the elapsed-cycle delta per lookup, which also absorbs injected
/// delays. `k_value` is the absolute difference between the maxima of the two
/// running-mean series.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ConstancyReport {
    pub lookups: usize,
    pub blocks: usize,
    pub fetch_running_mean: Vec<f64>,
    pub instruction_running_mean: Vec<f64>,
    pub fetch_mean_max: f64,
    pub instruction_mean_max: f64,
    pub k_value: f64,
    /// Coefficient of variation of per-block cycles (delays excluded).
    pub block_cycle_cov: f64,
    pub block_cycle_variance: f64,
}

struct SeriesTap {
    last_elapsed: u64,
    fetch: Vec<u64>,
    instruction: Vec<u64>,
}

impl LookupTap for SeriesTap {
    fn lookup(&mut self, fetch_cycles: u64, elapsed_after: u64) {
        self.fetch.push(fetch_cycles);
        self.instruction.push(elapsed_after - self.last_elapsed);
        self.last_elapsed = elapsed_after;
    }
}

/// Blocks run before instrumentation starts, so the series reflect the
/// settled regime instead of the cold start.
const CONSTANCY_WARM_BLOCKS: usize = 8;

/// Runs one seeded stream long enough to observe at least `run_length`
/// lookups and reduces the per-lookup series. Stream semantics match
/// [`crate::dcf::encrypt_stream`] (chunked, delays at chunk boundaries), with
/// the victim working set touched between blocks; a short warm-up prefix is
/// excluded from the statistics.
pub fn constancy_report(
    dcf: &DcfConfig,
    cache_cfg: &CacheConfig,
    run_length: usize,
    seed: u64,
) -> Result<ConstancyReport> {
    if run_length < 256 {
        return Err(Error::InvalidSpec(format!(
            "run length {run_length} is too short; need at least 256 lookups"
        )));
    }
    dcf.validate()?;
    let lookups_per_block = match dcf.access_mode {
        crate::aes::AccessMode::TTable => 160,
        crate::aes::AccessMode::SBox => 160,
        crate::aes::AccessMode::FullScan => 160 * 256,
        crate::aes::AccessMode::Logical => {
            return Err(Error::InvalidSpec(
                "the arithmetic-only mode performs no lookups to instrument".into(),
            ))
        }
    };
    let blocks = run_length.div_ceil(lookups_per_block);
    let blocks_per_chunk = dcf.chunk_size / BLOCK;

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5e1f));
    let key: [u8; 16] = rng.gen();

    let run_cfg = DcfConfig {
        rng_seed: mix_seed(seed, 0x10c),
        ..*dcf
    };
    let mut cache = Cache::new(*cache_cfg)?;
    let mut pipeline = DcfPipeline::new(run_cfg, &key)?;
    let workload = VictimWorkload::typical();

    for _ in 0..CONSTANCY_WARM_BLOCKS {
        workload.charge(&mut cache);
        let block: [u8; 16] = rng.gen();
        let out = pipeline.encrypt_block(&mut cache, &block);
        pipeline.chunk_delay(&mut cache, out.cycles);
    }

    let mut tap = SeriesTap {
        last_elapsed: cache.snapshot().elapsed_cycles,
        fetch: Vec::with_capacity(run_length),
        instruction: Vec::with_capacity(run_length),
    };
    let mut block_cycles = Vec::with_capacity(blocks);
    let mut done = 0;
    while done < blocks {
        let in_chunk = blocks_per_chunk.min(blocks - done);
        let chunk_start = cache.snapshot().elapsed_cycles;
        for _ in 0..in_chunk {
            workload.charge(&mut cache);
            let block: [u8; 16] = rng.gen();
            let out = pipeline.encrypt_block_tapped(&mut cache, &block, &mut tap);
            block_cycles.push(out.cycles);
        }
        let chunk_cycles = cache.snapshot().elapsed_cycles - chunk_start;
        pipeline.chunk_delay(&mut cache, chunk_cycles);
        done += in_chunk;
    }

    tap.fetch.truncate(run_length);
    tap.instruction.truncate(run_length);
    let fetch_running_mean = running_mean(&tap.fetch);
    let instruction_running_mean = running_mean(&tap.instruction);
    let fetch_mean_max = max_f64(&fetch_running_mean);
    let instruction_mean_max = max_f64(&instruction_running_mean);

    let n = block_cycles.len() as f64;
    let mean = block_cycles.iter().sum::<u64>() as f64 / n;
    let variance = block_cycles
        .iter()
        .map(|&c| (c as f64 - mean) * (c as f64 - mean))
        .sum::<f64>()
        / n;

    Ok(ConstancyReport {
        lookups: tap.fetch.len(),
        blocks: block_cycles.len(),
        fetch_running_mean,
        instruction_running_mean,
        fetch_mean_max,
        instruction_mean_max,
        k_value: (instruction_mean_max - fetch_mean_max).abs(),
        block_cycle_cov: if mean == 0.0 { 0.0 } else { variance.sqrt() / mean },
        block_cycle_variance: variance,
    })
}

impl ConstancyReport {
    /// CSV of the two running-mean series, one row per lookup ordinal.
    pub fn write_series_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "ordinal,fetch_running_mean,instruction_running_mean")?;
        for (i, (f, t)) in self
            .fetch_running_mean
            .iter()
            .zip(&self.instruction_running_mean)
            .enumerate()
        {
            writeln!(w, "{},{},{}", i, f, t)?;
        }
        Ok(())
    }

    pub fn write_summary_json<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        #[derive(serde::Serialize)]
        struct Summary {
            lookups: usize,
            blocks: usize,
            fetch_mean_max: f64,
            instruction_mean_max: f64,
            k_value: f64,
            block_cycle_cov: f64,
            block_cycle_variance: f64,
        }
        let body = serde_json::to_string_pretty(&Summary {
            lookups: self.lookups,
            blocks: self.blocks,
            fetch_mean_max: self.fetch_mean_max,
            instruction_mean_max: self.instruction_mean_max,
            k_value: self.k_value,
            block_cycle_cov: self.block_cycle_cov,
            block_cycle_variance: self.block_cycle_variance,
        })
        .expect("summary serializes");
        w.write_all(body.as_bytes())?;
        w.write_all(b"\n")
    }
}

fn running_mean(series: &[u64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0u64;
    for (i, &v) in series.iter().enumerate() {
        sum += v;
        out.push(sum as f64 / (i + 1) as f64);
    }
    out
}

fn max_f64(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}
