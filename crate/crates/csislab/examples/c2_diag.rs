use csislab::hash::pdq::pdq_hash;
use csislab::hash::{distance, DistanceMetric};
use csislab::img::bilinear_resize;
use csislab::scene::{synth_corpus, CorpusRole, CorpusSpec};

fn main() {
    let mut corpus = synth_corpus(&CorpusSpec { role: CorpusRole::IllicitStandin, count: 100, seed: 21 });
    corpus.extend(synth_corpus(&CorpusSpec { role: CorpusRole::Benign, count: 100, seed: 22 }));
    let names = ["resize0.5", "resize2", "bright1.1", "bright0.9", "jpeg80"];
    let mut fails = [0usize; 5];
    let mut sums = [0.0f64; 5];
    for (idx, img) in corpus.iter().enumerate() {
        let base = pdq_hash(img).unwrap();
        let w = img.width(); let h = img.height();
        let variants = [
            bilinear_resize(img, w / 2, h / 2),
            bilinear_resize(img, w * 2, h * 2),
            img.map(|p| p * 1.1),
            img.map(|p| p * 0.9),
            img.jpeg_roundtrip(80).unwrap(),
        ];
        for (vi, v) in variants.iter().enumerate() {
            let d = distance(&pdq_hash(v).unwrap(), &base, DistanceMetric::NormalizedL1).unwrap();
            sums[vi] += d;
            if d > 0.1 { fails[vi] += 1; if fails[vi] < 4 { println!("img {idx} ({}) {}: d={d:.3}", if idx < 100 {"standin"} else {"benign"}, names[vi]); } }
        }
    }
    for i in 0..5 { println!("{}: mean {:.4}, fails {}/200", names[i], sums[i]/200.0, fails[i]); }
}
