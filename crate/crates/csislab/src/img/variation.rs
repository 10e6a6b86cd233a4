//! The syntactic-variation suite used to score scanner robustness:
//! brightness, contrast, saturation, and center cropping at three severity
//! levels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::LumaImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariationName {
    Low,
    Medium,
    High,
}

impl std::fmt::Display for VariationName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VariationName::Low => write!(f, "low"),
            VariationName::Medium => write!(f, "medium"),
            VariationName::High => write!(f, "high"),
        }
    }
}

/// Factor ranges for one severity level. Factor 1.0 is the identity for
/// the photometric transforms; crop 1.0 keeps the full frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationLevel {
    pub level: VariationName,
    pub brightness: (f32, f32),
    pub contrast: (f32, f32),
    pub saturation: (f32, f32),
    pub crop: (f32, f32),
}

impl VariationLevel {
    pub fn low() -> Self {
        VariationLevel {
            level: VariationName::Low,
            brightness: (0.9, 1.1),
            contrast: (0.9, 1.1),
            saturation: (0.9, 1.1),
            crop: (0.9, 1.0),
        }
    }

    pub fn medium() -> Self {
        VariationLevel {
            level: VariationName::Medium,
            brightness: (0.7, 1.3),
            contrast: (0.7, 1.3),
            saturation: (0.7, 1.3),
            crop: (0.7, 1.0),
        }
    }

    pub fn high() -> Self {
        VariationLevel {
            level: VariationName::High,
            brightness: (0.5, 1.5),
            contrast: (0.5, 1.5),
            saturation: (0.5, 1.5),
            crop: (0.5, 1.0),
        }
    }

    pub fn named(name: VariationName) -> Self {
        match name {
            VariationName::Low => Self::low(),
            VariationName::Medium => Self::medium(),
            VariationName::High => Self::high(),
        }
    }

    /// An all-identity level, useful as a degenerate baseline.
    pub fn identity() -> Self {
        VariationLevel {
            level: VariationName::Low,
            brightness: (1.0, 1.0),
            contrast: (1.0, 1.0),
            saturation: (1.0, 1.0),
            crop: (1.0, 1.0),
        }
    }

    pub fn all() -> [Self; 3] {
        [Self::low(), Self::medium(), Self::high()]
    }
}

/// The factors actually drawn for one application, for instrumentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledFactors {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub crop: f32,
}

fn sample_range(rng: &mut impl Rng, (lo, hi): (f32, f32)) -> f32 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Samples one factor per transformation from the level's ranges and
/// applies brightness, contrast, saturation, and center crop in that fixed
/// order. Saturation is a no-op on a luminance plane; the factor is still
/// drawn so the random stream matches a color pipeline.
pub fn apply_variation(image: &LumaImage, level: &VariationLevel, seed: u64) -> LumaImage {
    apply_variation_traced(image, level, seed).0
}

pub fn apply_variation_traced(
    image: &LumaImage,
    level: &VariationLevel,
    seed: u64,
) -> (LumaImage, SampledFactors) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let factors = SampledFactors {
        brightness: sample_range(&mut rng, level.brightness),
        contrast: sample_range(&mut rng, level.contrast),
        saturation: sample_range(&mut rng, level.saturation),
        crop: sample_range(&mut rng, level.crop),
    };
    (apply_factors(image, &factors), factors)
}

pub fn apply_factors(image: &LumaImage, factors: &SampledFactors) -> LumaImage {
    let mut out = if factors.brightness != 1.0 {
        image.map(|p| p * factors.brightness)
    } else {
        image.clone()
    };
    if factors.contrast != 1.0 {
        let mean = out.mean();
        out = out.map(|p| (p - mean) * factors.contrast + mean);
    }
    // Saturation: no chroma on a luminance plane, nothing to scale.
    if factors.crop != 1.0 {
        out = out.center_crop(factors.crop);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img() -> LumaImage {
        LumaImage::from_fn(100, 100, |x, y| ((x * 7 + y * 3) % 90) as f32 / 100.0 + 0.05)
    }

    #[test]
    fn level_tables_match_the_published_ranges() {
        let low = VariationLevel::low();
        assert_eq!(low.brightness, (0.9, 1.1));
        assert_eq!(low.crop, (0.9, 1.0));
        let med = VariationLevel::medium();
        assert_eq!(med.contrast, (0.7, 1.3));
        assert_eq!(med.crop, (0.7, 1.0));
        let high = VariationLevel::high();
        assert_eq!(high.saturation, (0.5, 1.5));
        assert_eq!(high.crop, (0.5, 1.0));
    }

    #[test]
    fn identity_factors_are_a_pixel_noop() {
        let source = img();
        let out = apply_variation(&source, &VariationLevel::identity(), 42);
        assert_eq!(out, source);
    }

    #[test]
    fn crop_half_takes_central_quarter_area() {
        let source = img();
        let factors =
            SampledFactors { brightness: 1.0, contrast: 1.0, saturation: 1.0, crop: 0.5 };
        let out = apply_factors(&source, &factors);
        assert_eq!((out.width(), out.height()), (50, 50));
        assert_eq!(out.get(0, 0), source.get(25, 25));
    }

    #[test]
    fn same_seed_is_deterministic() {
        let source = img();
        let a = apply_variation(&source, &VariationLevel::medium(), 7);
        let b = apply_variation(&source, &VariationLevel::medium(), 7);
        assert_eq!(a, b);
    }

    #[test]
    fn sampled_factors_stay_in_range() {
        let source = img();
        for seed in 0..50 {
            let (_, f) = apply_variation_traced(&source, &VariationLevel::high(), seed);
            assert!((0.5..=1.5).contains(&f.brightness));
            assert!((0.5..=1.5).contains(&f.contrast));
            assert!((0.5..=1.5).contains(&f.saturation));
            assert!((0.5..=1.0).contains(&f.crop));
        }
    }
}
