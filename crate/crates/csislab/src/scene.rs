//! Synthetic scene and corpus generation, plus directory corpus loading.
//!
//! A procedural base scene (textured planes with geometric objects) stands
//! in for a physical location. Attacker-side reference views and held-out
//! user views are sampled from the same scene with independent seeded
//! viewpoint and lighting jitter, so the two sets share content but no
//! bitwise-identical frames. Conditions shift global illumination or
//! object layout deterministically.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::img::{affine_warp, AffineParams, ImageOpsError, LumaImage};
use crate::seeds::substream_indexed;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("corpus at {path} holds {found} decodable images, need {need}")]
    InsufficientImages { path: String, need: usize, found: usize },
    #[error(transparent)]
    Image(#[from] ImageOpsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Scene views split by who holds them.
#[derive(Debug, Clone)]
pub struct SceneDataset {
    pub reference: Vec<LumaImage>,
    pub user: Vec<LumaImage>,
    pub condition: u32,
    pub seed: u64,
}

/// Which stand-in population a corpus plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusRole {
    IllicitStandin,
    Benign,
    DeliveryPool,
}

impl std::fmt::Display for CorpusRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CorpusRole::IllicitStandin => write!(f, "illicit-standin"),
            CorpusRole::Benign => write!(f, "benign"),
            CorpusRole::DeliveryPool => write!(f, "delivery-pool"),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub role: CorpusRole,
    pub count: usize,
    pub seed: u64,
}

/// Side length of generated views.
pub const VIEW_DIM: u32 = 128;
/// Side length of generated corpus images. Large enough that the DCT
/// hash's tent filter actually smooths before decimation, as it does on
/// photographs.
pub const CORPUS_DIM: u32 = 256;
/// The base scene canvas is larger than a view so viewpoint jitter can pan.
const CANVAS_DIM: u32 = 256;

/// Procedural scene: a smooth multi-sinusoid background texture with a set
/// of flat geometric objects on top.
struct SceneModel {
    canvas: LumaImage,
}

fn value_texture(rng: &mut impl Rng, dim: u32, waves: usize, base: f32, amp: f32) -> LumaImage {
    let mut components = Vec::with_capacity(waves);
    for _ in 0..waves {
        components.push((
            rng.gen_range(0.01f32..0.09),
            rng.gen_range(0.01f32..0.09),
            rng.gen_range(0.0f32..std::f32::consts::TAU),
            rng.gen_range(0.3f32..1.0),
        ));
    }
    let norm: f32 = components.iter().map(|c| c.3).sum();
    LumaImage::from_fn(dim, dim, |x, y| {
        let mut v = 0.0;
        for &(fx, fy, phase, w) in &components {
            v += w * (fx * x as f32 + fy * y as f32 + phase).sin();
        }
        base + amp * v / norm
    })
}

#[derive(Clone, Copy)]
enum Shape {
    Disk,
    Rect,
    Triangle,
}

struct SceneObject {
    shape: Shape,
    cx: f32,
    cy: f32,
    size: f32,
    value: f32,
}

impl SceneObject {
    fn covers(&self, x: f32, y: f32) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        match self.shape {
            Shape::Disk => dx * dx + dy * dy <= self.size * self.size,
            Shape::Rect => dx.abs() <= self.size && dy.abs() <= self.size * 0.7,
            Shape::Triangle => dy >= -self.size && dy <= self.size && dx.abs() <= (self.size - dy) * 0.5,
        }
    }
}

impl SceneModel {
    /// Builds the canvas for (base_seed, condition). Conditions alternate
    /// between lighting shifts (odd) and layout shifts (even) so both kinds
    /// of environmental change are exercised.
    fn build(base_seed: u64, condition: u32) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(substream_indexed(base_seed, "scene-model", 0));
        let background = value_texture(&mut rng, CANVAS_DIM, 6, 0.45, 0.25);

        // Object geometry comes from the base seed; a layout condition
        // re-rolls positions with a condition-specific stream.
        let layout_shift = condition / 2;
        let mut layout_rng = ChaCha12Rng::seed_from_u64(substream_indexed(
            base_seed,
            "scene-layout",
            layout_shift as u64,
        ));
        let n_objects = 7 + (layout_rng.gen_range(0..3));
        let objects: Vec<SceneObject> = (0..n_objects)
            .map(|_| SceneObject {
                shape: match layout_rng.gen_range(0..3) {
                    0 => Shape::Disk,
                    1 => Shape::Rect,
                    _ => Shape::Triangle,
                },
                cx: layout_rng.gen_range(0.1..0.9) * CANVAS_DIM as f32,
                cy: layout_rng.gen_range(0.1..0.9) * CANVAS_DIM as f32,
                size: layout_rng.gen_range(0.05..0.16) * CANVAS_DIM as f32,
                value: layout_rng.gen_range(0.0f32..1.0),
            })
            .collect();

        // Lighting condition: a directional illumination gradient plus a
        // global gain, both condition-indexed.
        let light_shift = (condition + 1) / 2;
        let mut light_rng = ChaCha12Rng::seed_from_u64(substream_indexed(
            base_seed,
            "scene-light",
            light_shift as u64,
        ));
        let gain = light_rng.gen_range(0.75f32..1.15);
        let grad_angle = light_rng.gen_range(0.0f32..std::f32::consts::TAU);
        let grad_strength = light_rng.gen_range(0.05f32..0.3);
        let (gx, gy) = (grad_angle.cos(), grad_angle.sin());

        let canvas = LumaImage::from_fn(CANVAS_DIM, CANVAS_DIM, |x, y| {
            let mut v = background.get(x, y);
            for obj in &objects {
                if obj.covers(x as f32, y as f32) {
                    v = obj.value;
                }
            }
            let t = (gx * x as f32 + gy * y as f32) / CANVAS_DIM as f32;
            (v * gain * (1.0 + grad_strength * t)).clamp(0.0, 1.0)
        });
        SceneModel { canvas }
    }

    /// One camera view: a jittered crop of the canvas with a small affine
    /// wobble and per-view lighting noise.
    fn view(&self, seed: u64) -> LumaImage {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let max_off = CANVAS_DIM - VIEW_DIM;
        let x0 = rng.gen_range(0..=max_off / 4) + max_off * 3 / 8;
        let y0 = rng.gen_range(0..=max_off / 4) + max_off * 3 / 8;
        let crop = LumaImage::from_fn(VIEW_DIM, VIEW_DIM, |x, y| {
            self.canvas.get(x0 + x, y0 + y)
        });
        let params = AffineParams {
            rotation_degrees: rng.gen_range(-4.0f32..4.0),
            translate_x: rng.gen_range(-0.03f32..0.03),
            translate_y: rng.gen_range(-0.03f32..0.03),
            scale: rng.gen_range(0.92f32..1.08),
            shear_degrees: 0.0,
        };
        let warped = affine_warp(&crop, &params);
        let gain = rng.gen_range(0.94f32..1.06);
        let noise_seed: u64 = rng.gen();
        let mut noise_rng = ChaCha12Rng::seed_from_u64(noise_seed);
        let noise: Vec<f32> = (0..(VIEW_DIM * VIEW_DIM) as usize)
            .map(|_| noise_rng.gen_range(-0.01f32..0.01))
            .collect();
        LumaImage::from_fn(VIEW_DIM, VIEW_DIM, |x, y| {
            (warped.get(x, y) * gain + noise[(y * VIEW_DIM + x) as usize]).clamp(0.0, 1.0)
        })
    }
}

/// Renders a scene and samples reference and user views with independent
/// seed streams.
pub fn synth_scene(base_seed: u64, condition: u32, n_reference: usize, n_user: usize) -> SceneDataset {
    assert!(n_reference >= 1 && n_user >= 1, "counts must be at least 1");
    let model = SceneModel::build(base_seed, condition);
    let view_seed = |split: &str, i: usize| {
        substream_indexed(
            base_seed ^ (condition as u64) << 32,
            split,
            i as u64,
        )
    };
    let reference: Vec<LumaImage> = (0..n_reference)
        .into_par_iter()
        .map(|i| model.view(view_seed("reference-view", i)))
        .collect();
    let user: Vec<LumaImage> = (0..n_user)
        .into_par_iter()
        .map(|i| model.view(view_seed("user-view", i)))
        .collect();
    SceneDataset { reference, user, condition, seed: base_seed }
}

/// Synthetic stand-in corpora. Roles draw from different texture families
/// so the populations are distinguishable: stand-ins are blobby
/// high-contrast composites, benign images are geometric grids and
/// gradients.
pub fn synth_corpus(spec: &CorpusSpec) -> Vec<LumaImage> {
    (0..spec.count)
        .into_par_iter()
        .map(|i| {
            let seed = substream_indexed(spec.seed, "corpus", i as u64);
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            match spec.role {
                // The delivery pool stays small: collision crafting pays
                // per-query hash costs at source resolution.
                CorpusRole::IllicitStandin => standin_image(&mut rng, CORPUS_DIM),
                CorpusRole::DeliveryPool => standin_image(&mut rng, VIEW_DIM),
                CorpusRole::Benign => benign_image(&mut rng, CORPUS_DIM),
            }
        })
        .collect()
}

/// Blobby organic composite: a handful of soft disks over a textured
/// field. The raw value is compressed into [0.1, 0.9] analytically so no
/// pixel saturates; saturation plateaus would make photometric edits
/// nonlinear.
fn standin_image(rng: &mut impl Rng, dim: u32) -> LumaImage {
    let base = value_texture(rng, dim, 4, 0.5, 0.2);
    let n_blobs = rng.gen_range(3..7);
    let blobs: Vec<(f32, f32, f32, f32)> = (0..n_blobs)
        .map(|_| {
            (
                rng.gen_range(0.15..0.85) * dim as f32,
                rng.gen_range(0.15..0.85) * dim as f32,
                rng.gen_range(0.08..0.28) * dim as f32,
                rng.gen_range(-0.45f32..0.45),
            )
        })
        .collect();
    // Raw range: texture +-0.2, blob sum bounded by +-(0.45 * n_blobs) in
    // the worst overlap; normalize against a softer practical bound.
    LumaImage::from_fn(dim, dim, |x, y| {
        let mut v = base.get(x, y) - 0.5;
        for &(cx, cy, r, dv) in &blobs {
            let d2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
            if d2 < r * r {
                let falloff = 1.0 - (d2 / (r * r));
                v += dv * falloff;
            }
        }
        0.5 + 0.4 * (v / 0.9).clamp(-1.0, 1.0)
    })
}

/// Man-made-looking pattern: stripes or checkers over a linear gradient,
/// softened with broadband texture so the spectrum resembles a photograph
/// of a patterned object rather than a pure periodic signal.
fn benign_image(rng: &mut impl Rng, dim: u32) -> LumaImage {
    let kind = rng.gen_range(0..3);
    // Wavelengths stay several cells wide on the hash's decimation grid,
    // as they do in photographs; grid-Nyquist energy is what a DCT hash
    // is legitimately sensitive to.
    let period = rng.gen_range(24u32..56) as f32;
    let angle = rng.gen_range(0.0f32..std::f32::consts::PI);
    let (ax, ay) = (angle.cos(), angle.sin());
    let contrast = rng.gen_range(0.25f32..0.5);
    let grad = rng.gen_range(-0.2f32..0.2);
    let texture = value_texture(rng, dim, 5, 0.5, 0.3);
    LumaImage::from_fn(dim, dim, |x, y| {
        let s = ax * x as f32 + ay * y as f32;
        // Soft-edged pattern: a bounded ramp instead of a hard step.
        let wave = match kind {
            0 => ((s / period) * std::f32::consts::TAU).sin() * 2.0,
            1 => {
                (((x as f32 / period) * std::f32::consts::TAU).sin() * 2.0).clamp(-1.0, 1.0)
                    * (((y as f32 / period) * std::f32::consts::TAU).sin() * 2.0)
                        .clamp(-1.0, 1.0)
            }
            _ => ((s / (period * 2.0)) * std::f32::consts::TAU).sin() * 2.0,
        }
        .clamp(-1.0, 1.0);
        let v = contrast * wave
            + 0.35 * (texture.get(x, y) - 0.5)
            + grad * ((x as f32 + y as f32) / dim as f32 - 1.0);
        0.5 + 0.42 * (v / 0.9).clamp(-1.0, 1.0)
    })
}

/// One manifest record per image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    pub role: String,
    pub condition: u32,
    pub split: String,
}

/// Writes a line-delimited JSON manifest next to a dataset.
pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<(), SceneError> {
    let path = path.as_ref();
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec).expect("manifest records serialize"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>, SceneError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut records = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| SceneError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })?;
        records.push(rec);
    }
    Ok(records)
}

/// How to treat files that fail to decode while loading a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodePolicy {
    /// Skip undecodable files, reporting them in the result.
    Skip,
    /// Fail on the first undecodable file.
    Fail,
}

#[derive(Debug)]
pub struct LoadedCorpus {
    pub images: Vec<LumaImage>,
    /// Files skipped under [`DecodePolicy::Skip`], with their errors.
    pub skipped: Vec<(String, String)>,
}

/// Loads every decodable image in a directory, lexicographic by filename.
pub fn load_dir_all(
    dir: impl AsRef<Path>,
    policy: DecodePolicy,
) -> Result<LoadedCorpus, SceneError> {
    let dir = dir.as_ref();
    let count = image_files(dir)?.len();
    if count == 0 {
        return Err(SceneError::InsufficientImages {
            path: dir.display().to_string(),
            need: 1,
            found: 0,
        });
    }
    let spec = CorpusSpec { role: CorpusRole::Benign, count, seed: 0 };
    match load_corpus(dir, &spec, policy) {
        Ok(corpus) => Ok(corpus),
        // Undecodable files shrink the count below the directory size.
        Err(SceneError::InsufficientImages { .. }) if policy == DecodePolicy::Skip => {
            let mut images = Vec::new();
            let mut skipped = Vec::new();
            for (_, path) in image_files(dir)? {
                match LumaImage::decode_file(&path) {
                    Ok(img) => images.push(img),
                    Err(e) => skipped.push((path.display().to_string(), e.to_string())),
                }
            }
            Ok(LoadedCorpus { images, skipped })
        }
        Err(e) => Err(e),
    }
}

fn image_files(dir: &Path) -> Result<BTreeMap<String, std::path::PathBuf>, SceneError> {
    let mut entries: BTreeMap<String, std::path::PathBuf> = BTreeMap::new();
    let rd = std::fs::read_dir(dir).map_err(|source| SceneError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    for entry in rd {
        let entry = entry.map_err(|source| SceneError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let path = entry.path();
        if path.is_file() {
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .map(|e| e.to_ascii_lowercase())
                .unwrap_or_default();
            if matches!(ext.as_str(), "png" | "jpg" | "jpeg") {
                entries.insert(entry.file_name().to_string_lossy().into_owned(), path);
            }
        }
    }
    Ok(entries)
}

/// Loads a directory of images in lexicographic filename order, truncated
/// to `spec.count`.
pub fn load_corpus(
    dir: impl AsRef<Path>,
    spec: &CorpusSpec,
    policy: DecodePolicy,
) -> Result<LoadedCorpus, SceneError> {
    let dir = dir.as_ref();
    let entries = image_files(dir)?;
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    for (_, path) in entries {
        if images.len() == spec.count {
            break;
        }
        match LumaImage::decode_file(&path) {
            Ok(img) => images.push(img),
            Err(e) => match policy {
                DecodePolicy::Fail => return Err(SceneError::Image(e)),
                DecodePolicy::Skip => skipped.push((path.display().to_string(), e.to_string())),
            },
        }
    }
    if images.len() < spec.count {
        return Err(SceneError::InsufficientImages {
            path: dir.display().to_string(),
            need: spec.count,
            found: images.len(),
        });
    }
    Ok(LoadedCorpus { images, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn same_seed_same_dataset() {
        let a = synth_scene(11, 0, 4, 3);
        let b = synth_scene(11, 0, 4, 3);
        assert_eq!(a.reference, b.reference);
        assert_eq!(a.user, b.user);
    }

    #[test]
    fn counts_are_exact() {
        let d = synth_scene(5, 0, 50, 20);
        assert_eq!(d.reference.len(), 50);
        assert_eq!(d.user.len(), 20);
    }

    #[test]
    fn reference_and_user_views_are_disjoint() {
        let d = synth_scene(7, 0, 30, 30);
        let digest = |img: &LumaImage| {
            let mut h = sha2::Sha256::new();
            use sha2::Digest;
            for p in img.pixels() {
                h.update(p.to_le_bytes());
            }
            h.finalize().to_vec()
        };
        let refs: HashSet<Vec<u8>> = d.reference.iter().map(digest).collect();
        assert_eq!(refs.len(), 30, "reference views collide");
        for u in &d.user {
            assert!(!refs.contains(&digest(u)), "user view equals a reference view");
        }
    }

    #[test]
    fn corpus_roles_are_deterministic_and_distinct() {
        let spec = CorpusSpec { role: CorpusRole::Benign, count: 3, seed: 2 };
        assert_eq!(synth_corpus(&spec), synth_corpus(&spec));
        let standins =
            synth_corpus(&CorpusSpec { role: CorpusRole::IllicitStandin, count: 3, seed: 2 });
        assert_ne!(synth_corpus(&spec), standins);
    }

    #[test]
    fn load_corpus_orders_and_truncates() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["c.png", "a.png", "b.png"] {
            LumaImage::constant(64, 64, 0.4).save_png(dir.path().join(name)).unwrap();
        }
        // Write distinguishable content keyed by name order.
        LumaImage::constant(64, 64, 0.1).save_png(dir.path().join("a.png")).unwrap();
        LumaImage::constant(64, 64, 0.2).save_png(dir.path().join("b.png")).unwrap();
        LumaImage::constant(64, 64, 0.3).save_png(dir.path().join("c.png")).unwrap();
        let spec = CorpusSpec { role: CorpusRole::Benign, count: 2, seed: 0 };
        let corpus = load_corpus(dir.path(), &spec, DecodePolicy::Fail).unwrap();
        assert_eq!(corpus.images.len(), 2);
        assert!((corpus.images[0].get(0, 0) - 0.1).abs() < 0.01);
        assert!((corpus.images[1].get(0, 0) - 0.2).abs() < 0.01);
    }

    #[test]
    fn load_corpus_insufficient_errors() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec { role: CorpusRole::Benign, count: 1, seed: 0 };
        assert!(matches!(
            load_corpus(dir.path(), &spec, DecodePolicy::Fail),
            Err(SceneError::InsufficientImages { .. })
        ));
    }

    #[test]
    fn load_corpus_skip_policy_reports_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        LumaImage::constant(64, 64, 0.5).save_png(dir.path().join("ok.png")).unwrap();
        std::fs::write(dir.path().join("bad.png"), b"not an image").unwrap();
        let spec = CorpusSpec { role: CorpusRole::Benign, count: 1, seed: 0 };
        let corpus = load_corpus(dir.path(), &spec, DecodePolicy::Skip).unwrap();
        assert_eq!(corpus.images.len(), 1);
        assert_eq!(corpus.skipped.len(), 1);
        assert!(matches!(
            load_corpus(dir.path(), &CorpusSpec { count: 2, ..spec }, DecodePolicy::Fail),
            Err(SceneError::Image(_)) | Err(SceneError::InsufficientImages { .. })
        ));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let records = vec![
            ManifestRecord {
                path: "img/0001.png".into(),
                role: "reference".into(),
                condition: 0,
                split: "reference".into(),
            },
            ManifestRecord {
                path: "img/0002.png".into(),
                role: "user".into(),
                condition: 1,
                split: "user".into(),
            },
        ];
        write_manifest(&path, &records).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].condition, 1);
    }
}
