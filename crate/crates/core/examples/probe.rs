use dcflab::aes::AccessMode;
use dcflab::analysis::{constancy_report, render_heatmap, HeatmapSpec};
use dcflab::attack::{collect_samples, GuardedVictim, VictimWorkload, WarmCacheVictim};
use dcflab::cache::CacheConfig;
use dcflab::dcf::DcfConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let cache = CacheConfig::default();

    // constancy: per-block variance, TTABLE vs FULL_SCAN, countermeasures off
    for mode in [AccessMode::TTable, AccessMode::FullScan] {
        let report = constancy_report(
            &DcfConfig::disabled(mode),
            &cache,
            if mode == AccessMode::FullScan { 160 * 256 * 8 } else { 160 * 64 },
            11,
        )
        .unwrap();
        println!(
            "{mode}: blocks {} variance {} cov {} k {}",
            report.blocks, report.block_cycle_variance, report.block_cycle_cov, report.k_value
        );
    }

    // per-sample variance over 1000 random (key,input) on a warmed victim
    for mode in [AccessMode::TTable, AccessMode::FullScan] {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut victim = WarmCacheVictim::new(&[7u8; 16], mode, cache).unwrap();
        let samples = collect_samples(&mut victim, 1000, &mut rng).unwrap();
        let mean =
            samples.iter().map(|s| s.total_cycles).sum::<u64>() as f64 / samples.len() as f64;
        let var = samples
            .iter()
            .map(|s| (s.total_cycles as f64 - mean).powi(2))
            .sum::<f64>()
            / samples.len() as f64;
        println!("{mode} victim: mean {mean:.1} variance {var:.3}");
    }

    // heatmap contrast at desk scale
    let spec = HeatmapSpec::default();
    for mode in [AccessMode::TTable, AccessMode::FullScan] {
        let map = render_heatmap(&spec, &DcfConfig::disabled(mode), &cache, 5).unwrap();
        let distinct: std::collections::BTreeSet<u8> = map.pixels.iter().copied().collect();
        let nonzero_std = map.cells.iter().filter(|c| c.stddev_cycles > 0.0).count();
        println!(
            "heatmap {mode}: distinct grays {} cells with stddev>0 {}/{}",
            distinct.len(),
            nonzero_std,
            map.cells.len()
        );
    }

    // DCF victim sanity: how noisy is a protected sample stream
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut guarded = GuardedVictim::new(&[9u8; 16], DcfConfig::default(), cache).unwrap();
    let s = collect_samples(&mut guarded, 2000, &mut rng).unwrap();
    let mean = s.iter().map(|x| x.total_cycles).sum::<u64>() as f64 / s.len() as f64;
    let var =
        s.iter().map(|x| (x.total_cycles as f64 - mean).powi(2)).sum::<f64>() / s.len() as f64;
    println!("guarded victim: mean {mean:.1} std {:.1}", var.sqrt());

    let _ = VictimWorkload::typical();
}
