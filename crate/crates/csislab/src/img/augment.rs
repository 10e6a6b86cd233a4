//! The augmentation generator: expands a small reference set into a large
//! empirical sample of scene views via seeded random affine and perspective
//! transforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::transform::{affine_warp, perspective_warp, AffineParams, Homography};
use super::{ImageOpsError, LumaImage};

/// Ranges for the random view transforms. All ranges are symmetric about
/// the identity; a zero range disables that component.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Total number of images to return, originals included.
    pub target_count: usize,
    pub rotation_degrees: f32,
    /// Max |translation| as a fraction of each dimension.
    pub translate_fraction: f32,
    /// Scale is drawn from [scale_min, scale_max].
    pub scale_min: f32,
    pub scale_max: f32,
    pub shear_degrees: f32,
    /// Max corner jitter as a fraction of the image diagonal dimension.
    pub perspective_fraction: f32,
    pub seed: u64,
}

impl AugmentationConfig {
    /// Ranges used when nothing else is configured. The geometry defaults
    /// are exposed knobs, not calibrated constants.
    pub fn with_target(target_count: usize, seed: u64) -> Self {
        AugmentationConfig {
            target_count,
            rotation_degrees: 15.0,
            translate_fraction: 0.10,
            scale_min: 0.8,
            scale_max: 1.2,
            shear_degrees: 5.0,
            perspective_fraction: 0.05,
            seed,
        }
    }

    /// All transform ranges collapsed to the identity.
    pub fn identity(target_count: usize, seed: u64) -> Self {
        AugmentationConfig {
            target_count,
            rotation_degrees: 0.0,
            translate_fraction: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            shear_degrees: 0.0,
            perspective_fraction: 0.0,
            seed,
        }
    }

    fn is_identity(&self) -> bool {
        self.rotation_degrees == 0.0
            && self.translate_fraction == 0.0
            && self.scale_min == 1.0
            && self.scale_max == 1.0
            && self.shear_degrees == 0.0
            && self.perspective_fraction == 0.0
    }

    fn sample_affine(&self, rng: &mut impl Rng) -> AffineParams {
        AffineParams {
            rotation_degrees: sym_range(rng, self.rotation_degrees),
            translate_x: sym_range(rng, self.translate_fraction),
            translate_y: sym_range(rng, self.translate_fraction),
            scale: if self.scale_min == self.scale_max {
                self.scale_min
            } else {
                rng.gen_range(self.scale_min..=self.scale_max)
            },
            shear_degrees: sym_range(rng, self.shear_degrees),
        }
    }

    fn sample_perspective(&self, rng: &mut impl Rng, w: f32, h: f32) -> Option<Homography> {
        if self.perspective_fraction == 0.0 {
            return None;
        }
        let jx = self.perspective_fraction * w;
        let jy = self.perspective_fraction * h;
        let src = [(0.0, 0.0), (w - 1.0, 0.0), (w - 1.0, h - 1.0), (0.0, h - 1.0)];
        let mut dst = src;
        for corner in &mut dst {
            corner.0 += rng.gen_range(-jx..=jx);
            corner.1 += rng.gen_range(-jy..=jy);
        }
        Homography::from_corner_map(&src, &dst)
    }
}

fn sym_range(rng: &mut impl Rng, r: f32) -> f32 {
    if r == 0.0 {
        0.0
    } else {
        rng.gen_range(-r..=r)
    }
}

/// Returns exactly `cfg.target_count` images: the originals first, then
/// seeded random transforms of uniformly sampled originals. Each derived
/// image depends only on (seed, output index), so generation parallelizes
/// without affecting determinism.
pub fn augment(
    reference: &[LumaImage],
    cfg: &AugmentationConfig,
) -> Result<Vec<LumaImage>, ImageOpsError> {
    if reference.is_empty() {
        return Err(ImageOpsError::EmptyReferenceSet);
    }
    if cfg.target_count < reference.len() {
        return Err(ImageOpsError::TargetBelowSourceCount {
            target: cfg.target_count,
            sources: reference.len(),
        });
    }
    let extra = cfg.target_count - reference.len();
    let mut out: Vec<LumaImage> = reference.to_vec();
    if extra == 0 {
        return Ok(out);
    }
    let derived: Vec<LumaImage> = (0..extra)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha12Rng::seed_from_u64(
                cfg.seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            );
            let source = &reference[rng.gen_range(0..reference.len())];
            if cfg.is_identity() {
                return source.clone();
            }
            let affine = cfg.sample_affine(&mut rng);
            let mut img = affine_warp(source, &affine);
            if let Some(hom) =
                cfg.sample_perspective(&mut rng, source.width() as f32, source.height() as f32)
            {
                img = perspective_warp(&img, &hom);
            }
            img
        })
        .collect();
    out.extend(derived);
    Ok(out)
}
