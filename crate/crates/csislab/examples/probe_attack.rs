//! Diagnostic for the collision attack paths: NES against the DCT hash
//! and projected gradient against the surrogate, at acceptance-test sizes.

use csislab::attack::{craft_delivery, AttackConfig};
use csislab::hash::{distance, DistanceMetric, HashFunction, HashFunctionSpec};
use csislab::scene::{synth_corpus, CorpusRole, CorpusSpec};
use csislab::LumaImage;

fn main() {
    let t0 = std::time::Instant::now();
    // 64x64 sources: downscale the corpus images.
    let pool = synth_corpus(&CorpusSpec { role: CorpusRole::DeliveryPool, count: 25, seed: 3 });
    let sources: Vec<LumaImage> =
        pool.iter().map(|img| csislab::img::bilinear_resize(img, 64, 64)).collect();
    let scenes = synth_corpus(&CorpusSpec { role: CorpusRole::IllicitStandin, count: 25, seed: 9 });
    let scene_views: Vec<LumaImage> =
        scenes.iter().map(|img| csislab::img::bilinear_resize(img, 64, 64)).collect();

    // NES vs the DCT hash.
    let hash = HashFunction::Pdq;
    let mut ratios = Vec::new();
    let mut hits_325 = 0;
    for i in 0..20 {
        let target = hash.hash(&scene_views[i]).unwrap();
        let cfg = AttackConfig::nes(1000 + i as u64);
        let r = craft_delivery(&sources[i], &target, &hash, &cfg).unwrap();
        let ratio = if r.initial_distance > 0.0 {
            r.final_distance / r.initial_distance
        } else {
            0.0
        };
        ratios.push(ratio);
        if r.final_distance <= 0.325 {
            hits_325 += 1;
        }
        if i < 5 {
            println!(
                "nes[{i}]: init {:.3} final {:.3} ratio {ratio:.3} linf {:.4} queries {}",
                r.initial_distance, r.final_distance, r.linf_actual, r.queries_used
            );
        }
    }
    ratios.sort_by(f64::total_cmp);
    println!(
        "NES: median ratio {:.3}, fraction under t=0.325: {}/20, {:.1}s",
        ratios[10],
        hits_325,
        t0.elapsed().as_secs_f64()
    );

    // Projected gradient vs the surrogate at 64 bits.
    let t1 = std::time::Instant::now();
    let surrogate = HashFunction::from_spec(&HashFunctionSpec::surrogate(64, 77)).unwrap();
    let mut exact = 0;
    let mut finals = Vec::new();
    for i in 0..20 {
        let target = surrogate.hash(&scene_views[i]).unwrap();
        let cfg = AttackConfig::projected_gradient(2000 + i as u64);
        let r = craft_delivery(&sources[i], &target, &surrogate, &cfg).unwrap();
        if r.final_distance == 0.0 {
            exact += 1;
        }
        finals.push(r.final_distance);
        if i < 5 {
            println!(
                "pg[{i}]: init {:.3} final {:.3} linf {:.4}",
                r.initial_distance, r.final_distance, r.linf_actual
            );
        }
    }
    println!(
        "PG: exact matches {exact}/20, mean final {:.4}, {:.1}s",
        finals.iter().sum::<f64>() / finals.len() as f64,
        t1.elapsed().as_secs_f64()
    );

    // Distance scale check between corpora families.
    let a = hash.hash(&scene_views[0]).unwrap();
    let b = hash.hash(&sources[0]).unwrap();
    println!(
        "standin-vs-pool distance sample: {:.3}",
        distance(&a, &b, DistanceMetric::NormalizedL1).unwrap()
    );
}
