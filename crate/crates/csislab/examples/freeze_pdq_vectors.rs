//! Regenerates the committed DCT-hash conformance vectors.
//!
//! Synthetic test images are written under `tests/data/pdq/` and hashed
//! with the independently published reference-compatible implementation;
//! the resulting hex strings are frozen into `pdq_vectors.json` next to
//! them. The eight bridge photographs ship with published hashes and are
//! recorded as-is. Refuses to freeze when this crate's implementation
//! disagrees with the oracle (bit-exact on PNG, two bits of decoder
//! slack on JPEG).
//!
//! Run from the crate root: `cargo run -p csislab --example freeze_pdq_vectors`

use csislab::hash::pdq::pdq_hash;
use csislab::hash::PerceptualHash;
use csislab::LumaImage;

const OUT_DIR: &str = "crates/csislab/tests/data/pdq";

/// Hashes published alongside the bridge reference photographs.
const BRIDGE_VECTORS: &[(&str, &str)] = &[
    ("bridge-1-original.jpg", "f8f8f0cee0f4a84f06370a22038f63f0b36e2ed596621e1d33e6b39c4e9c9b22"),
    ("bridge-2-rotate-90.jpg", "30a10efd71cc3d429013d48d0ffffc52e34e0e17ada952a9d29685211ea9e5af"),
    ("bridge-3-rotate-180.jpg", "adad5a64b5a142e75b62a09857da895ae63b847fc23794b766b319361bc93188"),
    ("bridge-4-rotate-270.jpg", "a5f0a457a48995e8c9065c275aaa5498b61ba4bdf8fcf80387c32f8b1bfc4f05"),
    ("bridge-5-flipx.jpg", "f8f80f31e0f417b20e37f5cd028f980fb36ed02a9662c1e233e64c634e9c64dd"),
    ("bridge-6-flipy.jpg", "0dad2599b1a1bd1a5362576742da32a5e63b7380c2374b4866b366c91bc9ce77"),
    ("bridge-7-flip-plus-1.jpg", "f0a5e102f1ccc0bd945308720fff038de34ef1e8ada9a956d2967ade5ea91a50"),
    ("bridge-8-flip-minus-1.jpg", "a5f05aa8a4896a17c906a2d85aaaab07b61b5b42f8fc07fc87c3d0741bfcb0fa"),
];

fn smoothed_noise(seed: u64, dim: u32, radius: i64) -> LumaImage {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let noise: Vec<f32> = (0..(dim * dim) as usize).map(|_| rng.gen_range(0.0..1.0)).collect();
    let raw = LumaImage::new(dim, dim, noise).unwrap();
    LumaImage::from_fn(dim, dim, |x, y| {
        let mut acc = 0.0;
        let mut n = 0.0;
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                acc += raw.get_clamped(x as i64 + dx, y as i64 + dy);
                n += 1.0;
            }
        }
        acc / n
    })
}

/// (name, image, save-as-jpeg-too) triples covering gradients, waves,
/// shapes, and noise at several sizes and aspect ratios.
fn synthetic_images() -> Vec<(String, LumaImage, bool)> {
    let mut out: Vec<(String, LumaImage, bool)> = Vec::new();
    out.push((
        "gradient".into(),
        LumaImage::from_fn(200, 150, |x, y| {
            0.2 + 0.3 * (x as f32 / 199.0) + 0.3 * (y as f32 / 149.0)
        }),
        false,
    ));
    for (i, (fx, fy)) in [(0.05f32, 0.08f32), (0.13, 0.02), (0.21, 0.17)].iter().enumerate() {
        out.push((
            format!("waves{i}"),
            LumaImage::from_fn(128, 128, |x, y| {
                0.5 + 0.35 * ((fx * x as f32).sin() * (fy * y as f32).cos())
            }),
            false,
        ));
    }
    out.push((
        "shapes".into(),
        LumaImage::from_fn(160, 160, |x, y| {
            let mut v = 0.3 + 0.3 * (x as f32 / 159.0);
            if (x as f32 - 50.0).powi(2) + (y as f32 - 60.0).powi(2) < 900.0 {
                v = 0.9;
            }
            if (100..120).contains(&x) && y > 30 {
                v = 0.1;
            }
            v
        }),
        true,
    ));
    out.push((
        "checker".into(),
        LumaImage::from_fn(144, 144, |x, y| {
            let c = if (x / 18 + y / 18) % 2 == 0 { 0.75 } else { 0.25 };
            c + 0.2 * (y as f32 / 143.0)
        }),
        false,
    ));
    for (i, (seed, dim, radius)) in
        [(900u64, 96u32, 3i64), (901, 128, 3), (902, 257, 4), (903, 192, 5)].iter().enumerate()
    {
        out.push((format!("noise{i}"), smoothed_noise(*seed, *dim, *radius), i % 2 == 0));
    }
    out.push((
        "vignette".into(),
        LumaImage::from_fn(220, 170, |x, y| {
            let cx = (x as f32 - 110.0) / 110.0;
            let cy = (y as f32 - 85.0) / 85.0;
            (0.85 - 0.5 * (cx * cx + cy * cy)).clamp(0.05, 1.0)
        }),
        true,
    ));
    out
}

fn oracle_hex(bytes: &[u8]) -> String {
    let dynimg = pdqhash::image::load_from_memory(bytes).expect("oracle decodes");
    let (hash, _) = pdqhash::generate_pdq_full_size(&dynimg);
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

fn main() {
    let out_dir = std::path::Path::new(OUT_DIR);
    std::fs::create_dir_all(out_dir).expect("create output dir");
    let mut vectors: Vec<serde_json::Value> = Vec::new();

    for (name, hex) in BRIDGE_VECTORS {
        let path = out_dir.join(name);
        assert!(path.exists(), "missing reference photo {name}");
        let mine = pdq_hash(&LumaImage::decode_file(&path).unwrap()).unwrap();
        let published = PerceptualHash::from_hex(hex).unwrap();
        let deviation = mine.hamming(&published).unwrap();
        assert!(deviation <= 2, "{name}: {deviation} bits from the published hash");
        println!("{name}: published vector, deviation {deviation}");
        vectors.push(serde_json::json!({
            "file": name,
            "format": "jpeg",
            "source": "published",
            "hex": hex,
            "quality_at_freeze": mine.quality(),
        }));
    }

    for (name, img, also_jpeg) in synthetic_images() {
        let png_name = format!("{name}.png");
        let png_path = out_dir.join(&png_name);
        img.save_png(&png_path).expect("write png");
        let png_bytes = std::fs::read(&png_path).unwrap();
        let hex = oracle_hex(&png_bytes);
        let mine = pdq_hash(&LumaImage::decode_bytes(&png_bytes).unwrap()).unwrap();
        assert_eq!(mine.to_hex(), hex, "{png_name}: png disagreement with the oracle");
        println!("{png_name}: frozen {hex}");
        vectors.push(serde_json::json!({
            "file": png_name,
            "format": "png",
            "source": "oracle",
            "hex": hex,
            "quality_at_freeze": mine.quality(),
        }));

        if also_jpeg {
            let jpeg_name = format!("{name}.jpg");
            let jpeg_path = out_dir.join(&jpeg_name);
            img.save_jpeg(&jpeg_path, 85).expect("write jpeg");
            let jpeg_bytes = std::fs::read(&jpeg_path).unwrap();
            let hex = oracle_hex(&jpeg_bytes);
            let mine = pdq_hash(&LumaImage::decode_bytes(&jpeg_bytes).unwrap()).unwrap();
            let deviation =
                mine.hamming(&PerceptualHash::from_hex(&hex).unwrap()).unwrap();
            assert!(deviation <= 2, "{jpeg_name}: {deviation} bits of decoder variance");
            println!("{jpeg_name}: frozen {hex} (deviation {deviation})");
            vectors.push(serde_json::json!({
                "file": jpeg_name,
                "format": "jpeg",
                "source": "oracle",
                "hex": hex,
                "quality_at_freeze": mine.quality(),
            }));
        }
    }

    let json = serde_json::to_string_pretty(&vectors).unwrap();
    std::fs::write(out_dir.join("pdq_vectors.json"), json).expect("write vectors");
    println!("froze {} vectors", vectors.len());
}
