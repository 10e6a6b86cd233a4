//! Diagnose projected-gradient failures: which bits stay wrong and what
//! score deficit they carry.

use csislab::attack::{craft_delivery, AttackConfig};
use csislab::hash::{HashFunction, HashFunctionSpec};
use csislab::scene::{synth_corpus, CorpusRole, CorpusSpec};
use csislab::LumaImage;

fn main() {
    let pool = synth_corpus(&CorpusSpec { role: CorpusRole::DeliveryPool, count: 25, seed: 3 });
    let sources: Vec<LumaImage> =
        pool.iter().map(|img| csislab::img::bilinear_resize(img, 64, 64)).collect();
    let scenes = synth_corpus(&CorpusSpec { role: CorpusRole::IllicitStandin, count: 25, seed: 9 });
    let views: Vec<LumaImage> =
        scenes.iter().map(|img| csislab::img::bilinear_resize(img, 64, 64)).collect();

    let hash = HashFunction::from_spec(&HashFunctionSpec::surrogate(64, 77)).unwrap();
    let surrogate = match &hash {
        HashFunction::SurrogateProjection(s) => s,
        _ => unreachable!(),
    };

    let mut fails = 0;
    for i in 0..20 {
        let target = hash.hash(&views[i]).unwrap();
        let cfg = AttackConfig::projected_gradient(2000 + i as u64);
        let r = craft_delivery(&sources[i], &target, &hash, &cfg).unwrap();
        if r.final_distance > 0.0 {
            fails += 1;
            let scores = surrogate.scores(&r.image).unwrap();
            let init_scores = surrogate.scores(&sources[i]).unwrap();
            let wrong: Vec<(usize, f64, f64)> = scores
                .iter()
                .enumerate()
                .filter(|(c, &s)| (s > 0.0) != target.bit(*c))
                .map(|(c, &s)| (c, s, init_scores[c]))
                .collect();
            let sstd =
                (scores.iter().map(|s| s * s).sum::<f64>() / scores.len() as f64).sqrt();
            println!(
                "run {i}: {} wrong bits (score std {:.2}): {:?}",
                wrong.len(),
                sstd,
                wrong
                    .iter()
                    .map(|(c, s, s0)| format!("bit{c}: {s0:.2}->{s:.2}"))
                    .collect::<Vec<_>>()
            );
        }
    }
    println!("{fails}/20 failed");
}
