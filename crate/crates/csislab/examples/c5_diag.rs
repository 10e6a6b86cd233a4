//! Restart-count sensitivity of the small-instance subset-oracle check.
use csislab::hash::{HashFunction, PerceptualHash};
use csislab::poison::{kmodes_select, objective, KModesConfig};
use csislab::scene::synth_scene;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn main() {
    let hash = HashFunction::Pdq;
    for restarts in [5usize, 10, 20, 40] {
        let mut losses = 0;
        let mut total = 0;
        let mut worst = 0.0f64;
        for &scene_seed in &[501u64, 502, 503, 504, 505] {
            let scene = synth_scene(scene_seed, 0, 120, 10);
            let augmented = csislab::img::augment(
                &scene.reference,
                &csislab::img::AugmentationConfig::with_target(800, scene_seed),
            )
            .unwrap();
            let ref_hashes: Vec<PerceptualHash> =
                augmented.iter().map(|i| hash.hash(i).unwrap()).collect();
            for &seed in &[1u64, 2, 3, 4, 5] {
                let mut srng = ChaCha12Rng::seed_from_u64(seed ^ scene_seed);
                let mut small: Vec<PerceptualHash> = Vec::new();
                while small.len() < 25 {
                    let c = ref_hashes[srng.gen_range(0..ref_hashes.len())].clone();
                    if !small.contains(&c) {
                        small.push(c);
                    }
                }
                let km = kmodes_select(
                    &small,
                    &KModesConfig { k: 3, restarts, max_iterations: 100, seed },
                )
                .unwrap();
                let mut best = f64::INFINITY;
                for _ in 0..1000 {
                    let mut idx: Vec<usize> = (0..small.len()).collect();
                    idx.shuffle(&mut srng);
                    let subset: Vec<PerceptualHash> =
                        idx[..3].iter().map(|&i| small[i].clone()).collect();
                    best = best.min(objective(&subset, &small).unwrap().0);
                }
                total += 1;
                if km.objective > best {
                    losses += 1;
                    worst = worst.max(km.objective - best);
                }
            }
        }
        println!("restarts={restarts}: {losses}/{total} losses, worst gap {worst}");
    }
}
