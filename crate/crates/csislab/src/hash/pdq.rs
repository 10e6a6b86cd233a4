//! DCT-based 256-bit perceptual hash, pipeline-compatible with PDQ.
//!
//! The stages are the classic ones: luminance plane, two passes of a
//! box-filter pair (a tent filter) sized for the target grid, decimation to
//! a 64x64 buffer, a 16x16 low-frequency slice of the 2-D DCT that excludes
//! the DC term, and per-coefficient quantization against the block median.
//! Arithmetic is f32 end to end so hashes are bit-compatible with the
//! reference implementations; conformance vectors live in the test suite.

use std::sync::OnceLock;

use super::{HashError, PerceptualHash};
use crate::img::LumaImage;

pub const PDQ_BITS: u16 = 256;
/// Smallest usable input: at least one source pixel per grid cell.
pub const PDQ_MIN_DIM: u32 = 64;

const GRID: usize = 64;
const BLOCK: usize = 16;
const NUM_COEFFS: usize = BLOCK * BLOCK;
const TENT_FILTER_PASSES: usize = 2;

/// Pre-quantization state of a PDQ hash: the 16x16 DCT block, its median,
/// and the image-domain quality score. The collision attack steers these
/// coefficients directly.
#[derive(Debug, Clone)]
pub struct PdqFeatures {
    pub coeffs: [f32; NUM_COEFFS],
    pub median: f32,
    pub quality: f32,
}

impl PdqFeatures {
    pub fn to_hash(&self) -> PerceptualHash {
        let mut hash = PerceptualHash::zero(PDQ_BITS, self.quality);
        for (c, &v) in self.coeffs.iter().enumerate() {
            // Strictly greater than the median maps to 1; ties and below
            // map to 0, which keeps flat inputs deterministic.
            if v > self.median {
                hash.set_bit(c);
            }
        }
        hash
    }
}

pub fn pdq_hash(image: &LumaImage) -> Result<PerceptualHash, HashError> {
    Ok(pdq_features(image)?.to_hash())
}

/// Runs the pipeline up to the pre-quantization coefficients.
pub fn pdq_features(image: &LumaImage) -> Result<PdqFeatures, HashError> {
    if image.width() < PDQ_MIN_DIM || image.height() < PDQ_MIN_DIM {
        return Err(HashError::ImageTooSmall {
            width: image.width(),
            height: image.height(),
            min: PDQ_MIN_DIM,
        });
    }
    let num_cols = image.width() as usize;
    let num_rows = image.height() as usize;
    // The reference pipeline works on luma in [0, 255].
    let mut buffer: Vec<f32> = image.pixels().iter().map(|&p| p * 255.0).collect();

    let window_along_rows = tent_filter_window_size(num_cols, GRID);
    let window_along_cols = tent_filter_window_size(num_rows, GRID);
    tent_filter(&mut buffer, num_rows, num_cols, window_along_rows, window_along_cols);

    let grid = decimate(&buffer, num_rows, num_cols);
    let quality = image_domain_quality(&grid);
    let coeffs = dct_low_frequency_block(&grid);
    let median = torben_median(&coeffs);
    Ok(PdqFeatures { coeffs, median, quality })
}

fn tent_filter_window_size(old_dimension: usize, new_dimension: usize) -> usize {
    (old_dimension + 2 * new_dimension - 1) / (2 * new_dimension)
}

/// Two passes of a box filter along rows then columns; the composition
/// approximates a tent filter matched to the decimation grid.
fn tent_filter(
    buffer: &mut [f32],
    num_rows: usize,
    num_cols: usize,
    window_along_rows: usize,
    window_along_cols: usize,
) {
    let mut temp = vec![0.0f32; buffer.len()];
    for _ in 0..TENT_FILTER_PASSES {
        for i in 0..num_rows {
            box_filter_1d(buffer, i * num_cols, &mut temp, num_cols, 1, window_along_rows);
        }
        for j in 0..num_cols {
            box_filter_1d(&temp, j, buffer, num_rows, num_cols, window_along_cols);
        }
    }
}

/// Sliding-window mean over a strided 1-D slice, with shrunken windows at
/// both edges. Mirrors the reference implementation's four phases so the
/// floating-point accumulation order is identical.
fn box_filter_1d(
    input: &[f32],
    in_start_offset: usize,
    output: &mut [f32],
    vector_length: usize,
    stride: usize,
    full_window_size: usize,
) {
    let half_window_size = (full_window_size + 2) / 2;
    let phase_1_nreps = half_window_size - 1;
    let phase_2_nreps = full_window_size - half_window_size + 1;

    let oi_off = phase_1_nreps * stride;
    let li_off = phase_2_nreps * stride;

    let mut sum = 0.0f32;
    let mut current_window_size = 0.0f32;

    // Phase 1: accumulate the leading half window, no writes.
    let phase_1_end = oi_off + in_start_offset;
    for ri in (in_start_offset..phase_1_end).step_by(stride) {
        sum += input[ri];
        current_window_size += 1.0;
    }

    // Phase 2: initial writes while the window is still growing.
    let phase_2_end = full_window_size * stride + in_start_offset;
    for ri in (phase_1_end..phase_2_end).step_by(stride) {
        let oi = ri - oi_off;
        sum += input[ri];
        current_window_size += 1.0;
        output[oi] = sum / current_window_size;
    }

    // Phase 3: steady state with the full window.
    let phase_3_end = vector_length * stride + in_start_offset;
    for ri in (phase_2_end..phase_3_end).step_by(stride) {
        let oi = ri - oi_off;
        let li = oi - li_off;
        sum += input[ri];
        sum -= input[li];
        output[oi] = sum / current_window_size;
    }

    // Phase 4: trailing writes while the window shrinks.
    let phase_4_start = (vector_length - half_window_size + 1) * stride + in_start_offset;
    for oi in (phase_4_start..phase_3_end).step_by(stride) {
        let li = oi - li_off;
        sum -= input[li];
        current_window_size -= 1.0;
        output[oi] = sum / current_window_size;
    }
}

/// Samples the filtered buffer at cell centers to form the 64x64 grid.
fn decimate(input: &[f32], in_num_rows: usize, in_num_cols: usize) -> [[f32; GRID]; GRID] {
    let mut out = [[0.0f32; GRID]; GRID];
    for (outi, row) in out.iter_mut().enumerate() {
        let ini = ((outi * 2 + 1) * in_num_rows) / (GRID * 2);
        for (outj, v) in row.iter_mut().enumerate() {
            let inj = ((outj * 2 + 1) * in_num_cols) / (GRID * 2);
            *v = input[ini * in_num_cols + inj];
        }
    }
    out
}

/// Gradient-based quality heuristic over the 64x64 grid, on the reference
/// implementation's integer scale: 0 for flat inputs, capped at 100.
fn image_domain_quality(grid: &[[f32; GRID]; GRID]) -> f32 {
    let mut gradient_sum: i64 = 0;
    for i in 0..GRID - 1 {
        for j in 0..GRID {
            let d = ((grid[i][j] - grid[i + 1][j]) * 100.0 / 255.0) as i64;
            gradient_sum += d.abs();
        }
    }
    for i in 0..GRID {
        for j in 0..GRID - 1 {
            let d = ((grid[i][j] - grid[i][j + 1]) * 100.0 / 255.0) as i64;
            gradient_sum += d.abs();
        }
    }
    let quality = gradient_sum / 90;
    quality.min(100) as f32
}

/// 16x64 slice of the orthonormal DCT-II basis, skipping the DC row.
fn dct_matrix() -> &'static [[f32; GRID]; BLOCK] {
    static MATRIX: OnceLock<[[f32; GRID]; BLOCK]> = OnceLock::new();
    MATRIX.get_or_init(|| {
        let scale = (2.0f64 / GRID as f64).sqrt();
        let mut m = [[0.0f32; GRID]; BLOCK];
        for (i, row) in m.iter_mut().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                let angle = (std::f64::consts::PI / 2.0 / GRID as f64)
                    * ((i + 1) * (2 * k + 1)) as f64;
                *v = (scale * angle.cos()) as f32;
            }
        }
        m
    })
}

/// Computes only the 16x16 low-frequency corner of the 2-D DCT, as
/// `D * B * D^T` with the DC-free 16x64 basis slice.
fn dct_low_frequency_block(grid: &[[f32; GRID]; GRID]) -> [f32; NUM_COEFFS] {
    let d = dct_matrix();
    let mut intermediate = [[0.0f32; GRID]; BLOCK];
    for i in 0..BLOCK {
        for j in 0..GRID {
            let mut sum = 0.0f32;
            for k in 0..GRID {
                sum += d[i][k] * grid[k][j];
            }
            intermediate[i][j] = sum;
        }
    }
    let mut out = [0.0f32; NUM_COEFFS];
    for i in 0..BLOCK {
        for j in 0..BLOCK {
            let mut sum = 0.0f32;
            for k in 0..GRID {
                sum += intermediate[i][k] * d[j][k];
            }
            out[i * BLOCK + j] = sum;
        }
    }
    out
}

/// Torben's median: no allocation, no mutation of the input.
fn torben_median(values: &[f32]) -> f32 {
    let mut min = values.iter().cloned().fold(f32::INFINITY, f32::min);
    let mut max = values.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let half = (values.len() + 1) / 2;
    loop {
        let guess = (min + max) / 2.0;
        let mut less = 0usize;
        let mut greater = 0usize;
        let mut equal = 0usize;
        let mut maxltguess = min;
        let mut mingtguess = max;
        for &v in values {
            if v < guess {
                less += 1;
                if v > maxltguess {
                    maxltguess = v;
                }
            } else if v > guess {
                greater += 1;
                if v < mingtguess {
                    mingtguess = v;
                }
            } else {
                equal += 1;
            }
        }
        if less <= half && greater <= half {
            return if less >= half {
                maxltguess
            } else if less + equal >= half {
                guess
            } else {
                mingtguess
            };
        } else if less > greater {
            max = maxltguess;
        } else {
            min = mingtguess;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_zero_quality() {
        let img = LumaImage::constant(512, 512, 0.5);
        let hash = pdq_hash(&img).unwrap();
        assert_eq!(hash.quality(), 0.0);
        assert_eq!(hash.len_bits(), PDQ_BITS);
    }

    #[test]
    fn too_small_image_is_rejected() {
        let img = LumaImage::constant(63, 100, 0.5);
        assert!(matches!(pdq_hash(&img), Err(HashError::ImageTooSmall { .. })));
    }

    #[test]
    fn deterministic_on_identical_buffers() {
        let img = LumaImage::from_fn(80, 120, |x, y| {
            (((x * 13 + y * 7) % 64) as f32 / 63.0).clamp(0.0, 1.0)
        });
        let a = pdq_hash(&img).unwrap();
        let b = pdq_hash(&img).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.quality(), b.quality());
    }

    #[test]
    fn median_split_is_balanced_for_textured_input() {
        let img = LumaImage::from_fn(128, 128, |x, y| {
            (0.5 + 0.4 * ((x as f32 * 0.17).sin() * (y as f32 * 0.11).cos())).clamp(0.0, 1.0)
        });
        let hash = pdq_hash(&img).unwrap();
        // Median quantization puts roughly half the bits on each side.
        let ones = hash.count_ones();
        assert!((96..=160).contains(&ones), "ones = {ones}");
        assert!(hash.quality() > 0.0);
    }

    #[test]
    fn torben_median_matches_sorting() {
        let vals = [3.0f32, -1.0, 7.5, 0.0, 2.0, 2.0, 9.0, -4.0];
        let med = torben_median(&vals);
        let mut sorted = vals;
        sorted.sort_by(f32::total_cmp);
        // Even-length torben returns an element or midpoint guess bracketed
        // by the two central order statistics.
        assert!(med >= sorted[3] && med <= sorted[4], "median {med}");
    }
}
