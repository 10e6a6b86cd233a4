//! Seeded random-projection hash with differentiable pre-sign scores.
//!
//! Stands in for learned embedding hashes in white-box attack experiments:
//! the image is box-downsampled to a 32x32 grid, projected through a fixed
//! seeded Gaussian matrix whose rows are mean-centered, and each output bit
//! is the sign of its projection score. Everything before the sign is
//! linear in the pixels, so exact gradients are available.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{HashError, PerceptualHash};
use crate::img::LumaImage;

/// Side length of the downsample grid the projection sees.
pub const SURROGATE_GRID: usize = 32;
pub const SURROGATE_MIN_DIM: u32 = SURROGATE_GRID as u32;

const GRID_LEN: usize = SURROGATE_GRID * SURROGATE_GRID;

#[derive(Debug, Clone)]
pub struct SurrogateHash {
    output_bits: u16,
    seed: u64,
    /// Row-major `output_bits x GRID_LEN`. Rows are Gaussian, projected
    /// into the subspace orthogonal to the lowest 6x6 DCT block, so the
    /// scores respond to texture rather than global shading. Removing the
    /// DC component also makes every row sum to ~0, which is what makes
    /// an inverted image produce negated scores.
    rows: Vec<f64>,
}

/// Low-frequency 2-D DCT components removed from every projection row.
const LOWPASS_BLOCK: usize = 6;

fn lowpass_basis() -> Vec<Vec<f64>> {
    let g = SURROGATE_GRID;
    let mut basis = Vec::with_capacity(LOWPASS_BLOCK * LOWPASS_BLOCK);
    let alpha = |k: usize| if k == 0 { (1.0 / g as f64).sqrt() } else { (2.0 / g as f64).sqrt() };
    for u in 0..LOWPASS_BLOCK {
        for v in 0..LOWPASS_BLOCK {
            let mut b = vec![0.0f64; GRID_LEN];
            for y in 0..g {
                for x in 0..g {
                    let cu = (std::f64::consts::PI * (2 * y + 1) as f64 * u as f64
                        / (2 * g) as f64)
                        .cos();
                    let cv = (std::f64::consts::PI * (2 * x + 1) as f64 * v as f64
                        / (2 * g) as f64)
                        .cos();
                    b[y * g + x] = alpha(u) * alpha(v) * cu * cv;
                }
            }
            basis.push(b);
        }
    }
    basis
}

impl SurrogateHash {
    pub fn new(output_bits: u16, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let n = output_bits as usize;
        let basis = lowpass_basis();
        let mut rows = vec![0.0f64; n * GRID_LEN];
        for row in rows.chunks_mut(GRID_LEN) {
            for v in row.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            for b in &basis {
                let dot: f64 = row.iter().zip(b).map(|(r, b)| r * b).sum();
                for (r, b) in row.iter_mut().zip(b) {
                    *r -= dot * b;
                }
            }
        }
        SurrogateHash { output_bits, seed, rows }
    }

    pub fn output_bits(&self) -> u16 {
        self.output_bits
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn hash(&self, image: &LumaImage) -> Result<PerceptualHash, HashError> {
        let (scores, quality) = self.scores_and_quality(image)?;
        let mut hash = PerceptualHash::zero(self.output_bits, quality);
        for (c, &s) in scores.iter().enumerate() {
            if s > 0.0 {
                hash.set_bit(c);
            }
        }
        Ok(hash)
    }

    /// Pre-sign projection scores, the differentiable surface the white-box
    /// attack optimizes.
    pub fn scores(&self, image: &LumaImage) -> Result<Vec<f64>, HashError> {
        Ok(self.scores_and_quality(image)?.0)
    }

    fn scores_and_quality(&self, image: &LumaImage) -> Result<(Vec<f64>, f32), HashError> {
        let grid = self.downsample(image)?;
        let quality = grid_quality(&grid);
        let scores = self
            .rows
            .chunks(GRID_LEN)
            .map(|row| row.iter().zip(&grid).map(|(w, g)| w * g).sum::<f64>())
            .collect();
        Ok((scores, quality))
    }

    /// Box-average partition onto the 32x32 grid; every cell is non-empty
    /// for inputs of at least 32x32.
    pub fn downsample(&self, image: &LumaImage) -> Result<Vec<f64>, HashError> {
        if image.width() < SURROGATE_MIN_DIM || image.height() < SURROGATE_MIN_DIM {
            return Err(HashError::ImageTooSmall {
                width: image.width(),
                height: image.height(),
                min: SURROGATE_MIN_DIM,
            });
        }
        let (sums, counts) = grid_partition(image);
        Ok(sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect())
    }

    /// Pulls a gradient with respect to the scores back to a gradient with
    /// respect to the full-resolution pixels (the adjoint of downsample
    /// followed by projection).
    pub fn backprop_scores(
        &self,
        image: &LumaImage,
        dloss_dscores: &[f64],
    ) -> Result<Vec<f32>, HashError> {
        assert_eq!(dloss_dscores.len(), self.output_bits as usize);
        if image.width() < SURROGATE_MIN_DIM || image.height() < SURROGATE_MIN_DIM {
            return Err(HashError::ImageTooSmall {
                width: image.width(),
                height: image.height(),
                min: SURROGATE_MIN_DIM,
            });
        }
        let mut dgrid = [0.0f64; GRID_LEN];
        for (row, &ds) in self.rows.chunks(GRID_LEN).zip(dloss_dscores) {
            if ds != 0.0 {
                for (g, w) in dgrid.iter_mut().zip(row) {
                    *g += ds * w;
                }
            }
        }
        let (_, counts) = grid_partition(image);
        let w = image.width() as usize;
        let h = image.height() as usize;
        let mut dpixels = vec![0.0f32; w * h];
        for y in 0..h {
            let cy = y * SURROGATE_GRID / h;
            for x in 0..w {
                let cx = x * SURROGATE_GRID / w;
                let cell = cy * SURROGATE_GRID + cx;
                dpixels[y * w + x] = (dgrid[cell] / counts[cell] as f64) as f32;
            }
        }
        Ok(dpixels)
    }
}

fn grid_partition(image: &LumaImage) -> ([f64; GRID_LEN], [u32; GRID_LEN]) {
    let w = image.width() as usize;
    let h = image.height() as usize;
    let px = image.pixels();
    let mut sums = [0.0f64; GRID_LEN];
    let mut counts = [0u32; GRID_LEN];
    for y in 0..h {
        let cy = y * SURROGATE_GRID / h;
        for x in 0..w {
            let cx = x * SURROGATE_GRID / w;
            let cell = cy * SURROGATE_GRID + cx;
            sums[cell] += px[y * w + x] as f64;
            counts[cell] += 1;
        }
    }
    (sums, counts)
}

/// Same gradient heuristic as the DCT hash, over the projection grid scaled
/// to [0, 255]; flat inputs score 0.
fn grid_quality(grid: &[f64]) -> f32 {
    let g = SURROGATE_GRID;
    let mut gradient_sum: i64 = 0;
    for i in 0..g - 1 {
        for j in 0..g {
            let d = ((grid[i * g + j] - grid[(i + 1) * g + j]) * 255.0 * 100.0 / 255.0) as i64;
            gradient_sum += d.abs();
        }
    }
    for i in 0..g {
        for j in 0..g - 1 {
            let d = ((grid[i * g + j] - grid[i * g + j + 1]) * 255.0 * 100.0 / 255.0) as i64;
            gradient_sum += d.abs();
        }
    }
    // The 64x64 heuristic divides by 90; this grid has a quarter of the
    // gradient terms.
    let quality = gradient_sum / 23;
    quality.min(100) as f32
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(seed: u32) -> LumaImage {
        LumaImage::from_fn(64, 64, |x, y| {
            let t = ((x.wrapping_mul(31).wrapping_add(y.wrapping_mul(17)).wrapping_add(seed))
                % 97) as f32
                / 96.0;
            (0.2 + 0.6 * t).clamp(0.0, 1.0)
        })
    }

    #[test]
    fn same_seed_same_hash() {
        let img = textured(3);
        let a = SurrogateHash::new(64, 9).hash(&img).unwrap();
        let b = SurrogateHash::new(64, 9).hash(&img).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seed_different_projection() {
        let img = textured(3);
        let a = SurrogateHash::new(64, 9).hash(&img).unwrap();
        let b = SurrogateHash::new(64, 10).hash(&img).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn negation_flips_every_score() {
        let img = textured(5);
        let inverted = LumaImage::from_fn(64, 64, |x, y| 1.0 - img.get(x, y));
        let s = SurrogateHash::new(64, 2);
        let a = s.scores(&img).unwrap();
        let b = s.scores(&inverted).unwrap();
        // The inversion itself rounds in f32, so allow that noise floor.
        for (x, y) in a.iter().zip(&b) {
            assert!((x + y).abs() < 1e-5, "scores not complementary: {x} vs {y}");
        }
    }

    #[test]
    fn small_image_rejected() {
        let img = LumaImage::constant(16, 40, 0.5);
        assert!(matches!(
            SurrogateHash::new(64, 0).hash(&img),
            Err(HashError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn noise_robustness_on_64_bits() {
        use rand::Rng;
        let s = SurrogateHash::new(64, 11);
        let mut worst = 0.0f64;
        for trial in 0..20u64 {
            let img = textured(trial as u32 + 100);
            let mut rng = ChaCha12Rng::seed_from_u64(trial);
            let noisy = LumaImage::from_fn(64, 64, |x, y| {
                (img.get(x, y) + rng.gen_range(-1.0f32 / 255.0..1.0 / 255.0)).clamp(0.0, 1.0)
            });
            let a = s.hash(&img).unwrap();
            let b = s.hash(&noisy).unwrap();
            let d = crate::hash::distance(&a, &b, crate::hash::DistanceMetric::NormalizedL1)
                .unwrap();
            worst = worst.max(d);
        }
        assert!(worst <= 0.05, "worst-case noise distance {worst}");
    }
}
