//! Quick diagnostic over the synthetic scenario: distance scales,
//! calibration, and headline rates at reduced sizes. Not part of the test
//! suite; handy while tuning generator parameters.

use csislab::eval::{hash_all, surveillance_rate};
use csislab::hash::{DistanceMetric, HashFunction};
use csislab::matcher::{HashDatabase, MatchConfig};
use csislab::poison::{kmodes_select, random_select, KModesConfig};
use csislab::scene::{synth_corpus, synth_scene, CorpusRole, CorpusSpec};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn main() {
    let t0 = std::time::Instant::now();
    let hash = HashFunction::Pdq;
    let metric = DistanceMetric::NormalizedL1;

    // Reduced desk sizes for the probe.
    let scene = synth_scene(42, 0, 120, 120);
    let scene_b = synth_scene(42, 1, 40, 40);
    let standins = synth_corpus(&CorpusSpec {
        role: CorpusRole::IllicitStandin,
        count: 800,
        seed: 1,
    });
    let benign = synth_corpus(&CorpusSpec { role: CorpusRole::Benign, count: 800, seed: 2 });
    println!("gen: {:.1}s", t0.elapsed().as_secs_f64());

    let augmented = csislab::img::augment(
        &scene.reference,
        &csislab::img::AugmentationConfig {
            target_count: 900,
            rotation_degrees: 8.0,
            translate_fraction: 0.05,
            scale_min: 0.9,
            scale_max: 1.1,
            shear_degrees: 3.0,
            perspective_fraction: 0.03,
            seed: 5,
        },
    )
    .unwrap();

    let ref_hashes = hash_all(&hash, &augmented).unwrap();
    let user_hashes = hash_all(&hash, &scene.user).unwrap();
    let user_b_hashes = hash_all(&hash, &scene_b.user).unwrap();
    let standin_hashes = hash_all(&hash, &standins).unwrap();
    let benign_hashes = hash_all(&hash, &benign).unwrap();
    println!("hash: {:.1}s total", t0.elapsed().as_secs_f64());

    // Within-scene distance scale: user hash to nearest augmented ref.
    let ref_db = HashDatabase::from_legitimate(ref_hashes.iter().cloned()).unwrap();
    let dmins = ref_db.min_distances(&user_hashes).unwrap();
    let dnorm: Vec<f64> = dmins.iter().map(|&d| d as f64 / 256.0).collect();
    let mut sorted = dnorm.clone();
    sorted.sort_by(f64::total_cmp);
    println!(
        "user->augmented-ref nearest: mean {:.3} p10 {:.3} median {:.3} p90 {:.3}",
        mean(&dnorm),
        sorted[sorted.len() / 10],
        sorted[sorted.len() / 2],
        sorted[sorted.len() * 9 / 10]
    );
    let dmins_b = ref_db.min_distances(&user_b_hashes).unwrap();
    println!(
        "cross-condition user->ref nearest: mean {:.3}",
        mean(&dmins_b.iter().map(|&d| d as f64 / 256.0).collect::<Vec<_>>())
    );

    // Calibration against the clean database.
    let legit_db = HashDatabase::from_legitimate(standin_hashes.iter().cloned()).unwrap();
    let cal = legit_db.calibrate_threshold(&benign_hashes, metric, 0.01).unwrap();
    println!("calibrated t = {:.4}", cal.threshold);

    // Poisons at 5% budget.
    let k = (legit_db.len() as f64 * 0.05).round() as usize;
    let t1 = std::time::Instant::now();
    let kmodes = kmodes_select(&ref_hashes, &KModesConfig::new(k, 9)).unwrap();
    println!("kmodes k={k}: {:.1}s objective {}", t1.elapsed().as_secs_f64(), kmodes.objective);
    let random = random_select(&ref_hashes, k, 9).unwrap();
    println!("random objective {}", random.objective);

    let cfg = MatchConfig { metric, threshold: cal.threshold };
    for (name, set) in [("kmodes", &kmodes), ("random", &random)] {
        let db = legit_db.with_poisons(set.hashes.iter().cloned()).unwrap();
        let sv = surveillance_rate(&user_hashes, &db, &cfg).unwrap();
        let sv_b = surveillance_rate(&user_b_hashes, &db, &cfg).unwrap();
        let fpr = db.false_positive_rate(&benign_hashes, &cfg).unwrap();
        println!("{name}: surveillance {sv:.3} cross-cond {sv_b:.3} fpr {fpr:.4}");
    }
    println!("total: {:.1}s", t0.elapsed().as_secs_f64());
}
