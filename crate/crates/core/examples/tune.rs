use dcflab::aes::AccessMode;
use dcflab::attack::{
    build_reference_profiles, collect_samples, recover_key, GuardedVictim, Method, Victim,
    WarmCacheVictim,
};
use dcflab::cache::CacheConfig;
use dcflab::dcf::DcfConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn run_attack(
    make_victim: &dyn Fn(&[u8; 16]) -> Box<dyn Victim>,
    samples: usize,
    seed: u64,
) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let known_key: [u8; 16] = rng.gen();
    let true_key: [u8; 16] = rng.gen();

    let mut profiling = make_victim(&known_key);
    let ref_samples = collect_samples(profiling.as_mut(), samples, &mut rng).unwrap();
    let references =
        build_reference_profiles(&ref_samples, &known_key, &(0..16).collect::<Vec<_>>()).unwrap();

    let mut target = make_victim(&true_key);
    let attack_samples = collect_samples(target.as_mut(), samples, &mut rng).unwrap();
    let result = recover_key(&attack_samples, &references, Method::Correlation).unwrap();
    result.bytes_correct(&true_key)
}

fn main() {
    let cache = CacheConfig::default();
    let samples = 1 << 14;

    // criterion-4 shape: vulnerable victim
    let vulnerable: Box<dyn Fn(&[u8; 16]) -> Box<dyn Victim>> = Box::new(move |key| {
        Box::new(WarmCacheVictim::new(key, AccessMode::TTable, cache).unwrap())
    });
    let scores: Vec<usize> = (0..20)
        .map(|s| run_attack(vulnerable.as_ref(), samples, 1000 + s))
        .collect();
    println!(
        "vulnerable: ge14 {}/20 perfect {}/20 {scores:?}",
        scores.iter().filter(|&&c| c >= 14).count(),
        scores.iter().filter(|&&c| c == 16).count()
    );

    // criterion-5a shape: full-scan victim
    let fullscan: Box<dyn Fn(&[u8; 16]) -> Box<dyn Victim>> = Box::new(move |key| {
        Box::new(WarmCacheVictim::new(key, AccessMode::FullScan, cache).unwrap())
    });
    let scores: Vec<usize> = (0..20)
        .map(|s| run_attack(fullscan.as_ref(), samples, 2000 + s))
        .collect();
    println!(
        "full_scan: max {} {scores:?}",
        scores.iter().max().unwrap()
    );

    // criterion-5b shape: ttable behind the countermeasures
    let guarded: Box<dyn Fn(&[u8; 16]) -> Box<dyn Victim>> = Box::new(move |key| {
        Box::new(GuardedVictim::new(key, DcfConfig::default(), cache).unwrap())
    });
    let scores: Vec<usize> = (0..20)
        .map(|s| run_attack(guarded.as_ref(), samples, 3000 + s))
        .collect();
    println!("guarded: max {} {scores:?}", scores.iter().max().unwrap());

    // monotone attack power on three seeds
    for seed in [1000u64, 1004, 1011] {
        let seq: Vec<usize> = [1 << 12, 1 << 13, 1 << 14]
            .iter()
            .map(|&n| run_attack(vulnerable.as_ref(), n, seed))
            .collect();
        println!("monotone seed {seed}: {seq:?}");
    }
}
