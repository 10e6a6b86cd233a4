//! Affine and perspective warps with bilinear sampling and edge-replicated
//! fill. Black fill would dominate the DCT hashes, so everything outside
//! the source frame replicates the border instead.

use super::LumaImage;

/// Affine warp parameters, applied about the image center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub rotation_degrees: f32,
    /// Translation as a fraction of width/height.
    pub translate_x: f32,
    pub translate_y: f32,
    pub scale: f32,
    pub shear_degrees: f32,
}

impl AffineParams {
    pub fn identity() -> Self {
        AffineParams {
            rotation_degrees: 0.0,
            translate_x: 0.0,
            translate_y: 0.0,
            scale: 1.0,
            shear_degrees: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    /// Row-major 3x3 forward matrix mapping source to destination
    /// coordinates, centered on (cx, cy).
    fn matrix(&self, cx: f32, cy: f32, width: f32, height: f32) -> [f32; 9] {
        let theta = self.rotation_degrees.to_radians();
        let (s, c) = theta.sin_cos();
        let shear = self.shear_degrees.to_radians().tan();
        let k = self.scale;
        // rotate * shear-x * uniform scale
        let m00 = k * c;
        let m01 = k * (c * shear - s);
        let m10 = k * s;
        let m11 = k * (s * shear + c);
        let tx = self.translate_x * width;
        let ty = self.translate_y * height;
        // Conjugate by the center translation, then add the pixel shift.
        [
            m00,
            m01,
            cx - m00 * cx - m01 * cy + tx,
            m10,
            m11,
            cy - m10 * cx - m11 * cy + ty,
            0.0,
            0.0,
            1.0,
        ]
    }
}

/// Row-major 3x3 projective transform together with its inverse.
#[derive(Debug, Clone, Copy)]
pub struct Homography {
    forward: [f32; 9],
    inverse: [f32; 9],
}

impl Homography {
    pub fn from_matrix(forward: [f32; 9]) -> Option<Self> {
        invert_3x3(&forward).map(|inverse| Homography { forward, inverse })
    }

    pub fn identity() -> Self {
        let id = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        Homography { forward: id, inverse: id }
    }

    /// Least-surprise constructor: the homography sending each source
    /// corner to the matching destination corner.
    pub fn from_corner_map(src: &[(f32, f32); 4], dst: &[(f32, f32); 4]) -> Option<Self> {
        // Direct linear transform: 8 equations in the 8 unknowns of the
        // matrix with h22 fixed to 1.
        let mut a = [[0.0f64; 9]; 8];
        for i in 0..4 {
            let (x, y) = (src[i].0 as f64, src[i].1 as f64);
            let (u, v) = (dst[i].0 as f64, dst[i].1 as f64);
            a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
            a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
        }
        let h = solve_8x8(&mut a)?;
        let forward = [
            h[0] as f32,
            h[1] as f32,
            h[2] as f32,
            h[3] as f32,
            h[4] as f32,
            h[5] as f32,
            h[6] as f32,
            h[7] as f32,
            1.0,
        ];
        Self::from_matrix(forward)
    }

    #[inline]
    fn apply_inverse(&self, x: f32, y: f32) -> (f32, f32) {
        let m = &self.inverse;
        let w = m[6] * x + m[7] * y + m[8];
        ((m[0] * x + m[1] * y + m[2]) / w, (m[3] * x + m[4] * y + m[5]) / w)
    }

    pub fn forward(&self) -> &[f32; 9] {
        &self.forward
    }
}

/// Gaussian elimination with partial pivoting on the augmented 8x9 system.
fn solve_8x8(a: &mut [[f64; 9]; 8]) -> Option<[f64; 8]> {
    for col in 0..8 {
        let pivot = (col..8).max_by(|&i, &j| {
            a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()
        })?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        let p = a[col][col];
        for j in col..9 {
            a[col][j] /= p;
        }
        for i in 0..8 {
            if i != col && a[i][col] != 0.0 {
                let f = a[i][col];
                for j in col..9 {
                    a[i][j] -= f * a[col][j];
                }
            }
        }
    }
    let mut out = [0.0f64; 8];
    for i in 0..8 {
        out[i] = a[i][8];
    }
    Some(out)
}

fn invert_3x3(m: &[f32; 9]) -> Option<[f32; 9]> {
    let det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6]);
    if det.abs() < 1e-12 {
        return None;
    }
    let inv_det = 1.0 / det;
    Some([
        (m[4] * m[8] - m[5] * m[7]) * inv_det,
        (m[2] * m[7] - m[1] * m[8]) * inv_det,
        (m[1] * m[5] - m[2] * m[4]) * inv_det,
        (m[5] * m[6] - m[3] * m[8]) * inv_det,
        (m[0] * m[8] - m[2] * m[6]) * inv_det,
        (m[2] * m[3] - m[0] * m[5]) * inv_det,
        (m[3] * m[7] - m[4] * m[6]) * inv_det,
        (m[1] * m[6] - m[0] * m[7]) * inv_det,
        (m[0] * m[4] - m[1] * m[3]) * inv_det,
    ])
}

#[inline]
fn bilinear_sample(img: &LumaImage, x: f32, y: f32) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let xi = x0 as i64;
    let yi = y0 as i64;
    let p00 = img.get_clamped(xi, yi);
    let p10 = img.get_clamped(xi + 1, yi);
    let p01 = img.get_clamped(xi, yi + 1);
    let p11 = img.get_clamped(xi + 1, yi + 1);
    let top = p00 + (p10 - p00) * fx;
    let bot = p01 + (p11 - p01) * fx;
    top + (bot - top) * fy
}

/// Warps by an affine transform about the image center; output size equals
/// input size, out-of-frame regions replicate the border.
pub fn affine_warp(img: &LumaImage, params: &AffineParams) -> LumaImage {
    if params.is_identity() {
        return img.clone();
    }
    let w = img.width() as f32;
    let h = img.height() as f32;
    let m = params.matrix((w - 1.0) / 2.0, (h - 1.0) / 2.0, w, h);
    let hom = Homography::from_matrix(m).unwrap_or_else(Homography::identity);
    warp_with(img, &hom)
}

/// Warps by an arbitrary homography (inverse sampling, bilinear).
pub fn perspective_warp(img: &LumaImage, hom: &Homography) -> LumaImage {
    warp_with(img, hom)
}

fn warp_with(img: &LumaImage, hom: &Homography) -> LumaImage {
    LumaImage::from_fn(img.width(), img.height(), |x, y| {
        let (sx, sy) = hom.apply_inverse(x as f32, y as f32);
        bilinear_sample(img, sx, sy)
    })
}

/// Triangle-filter resize to exact target dimensions: plain bilinear when
/// magnifying, with the kernel support widened by the scale factor when
/// minifying so downscales are antialiased.
pub fn bilinear_resize(img: &LumaImage, new_width: u32, new_height: u32) -> LumaImage {
    assert!(new_width > 0 && new_height > 0);
    // Horizontal pass then vertical pass; each is a 1-D tent resample.
    let horizontal = resample_axis(
        img.pixels(),
        img.width() as usize,
        img.height() as usize,
        new_width as usize,
        true,
    );
    let vertical = resample_axis(
        &horizontal,
        new_width as usize,
        img.height() as usize,
        new_height as usize,
        false,
    );
    LumaImage::from_fn(new_width, new_height, |x, y| {
        vertical[y as usize * new_width as usize + x as usize]
    })
}

/// Tent-kernel resample of one axis. `input` is row-major `width x height`;
/// the chosen axis length changes from its current value to `new_len`.
fn resample_axis(
    input: &[f32],
    width: usize,
    height: usize,
    new_len: usize,
    along_x: bool,
) -> Vec<f32> {
    let old_len = if along_x { width } else { height };
    let other = if along_x { height } else { width };
    let scale = old_len as f32 / new_len as f32;
    let support = scale.max(1.0);
    let mut out = vec![0.0f32; new_len * other];
    for o in 0..other {
        for i in 0..new_len {
            let center = (i as f32 + 0.5) * scale - 0.5;
            let lo = (center - support).ceil().max(0.0) as usize;
            let hi = (center + support).floor().min(old_len as f32 - 1.0) as usize;
            let mut acc = 0.0f32;
            let mut norm = 0.0f32;
            for j in lo..=hi {
                let w = 1.0 - (j as f32 - center).abs() / support;
                if w <= 0.0 {
                    continue;
                }
                let v = if along_x { input[o * width + j] } else { input[j * width + o] };
                acc += w * v;
                norm += w;
            }
            let v = if norm > 0.0 {
                acc / norm
            } else {
                // Degenerate support: fall back to the nearest source.
                let j = (center.round().max(0.0) as usize).min(old_len - 1);
                if along_x {
                    input[o * width + j]
                } else {
                    input[j * width + o]
                }
            };
            let idx = if along_x { o * new_len + i } else { i * width + o };
            out[idx] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_affine_is_noop() {
        let img = LumaImage::from_fn(32, 48, |x, y| ((x * y) % 255) as f32 / 255.0);
        let out = affine_warp(&img, &AffineParams::identity());
        assert_eq!(out, img);
    }

    #[test]
    fn identity_corner_map_is_identity_homography() {
        let corners = [(0.0, 0.0), (63.0, 0.0), (63.0, 63.0), (0.0, 63.0)];
        let hom = Homography::from_corner_map(&corners, &corners).unwrap();
        for (i, v) in hom.forward().iter().enumerate() {
            let expected = if i % 4 == 0 { 1.0 } else { 0.0 };
            assert!((v - expected).abs() < 1e-4, "entry {i} = {v}");
        }
    }

    #[test]
    fn corner_map_translation() {
        let src = [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)];
        let dst = [(2.0, 3.0), (12.0, 3.0), (12.0, 13.0), (2.0, 13.0)];
        let hom = Homography::from_corner_map(&src, &dst).unwrap();
        let f = hom.forward();
        assert!((f[2] - 2.0).abs() < 1e-4);
        assert!((f[5] - 3.0).abs() < 1e-4);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = LumaImage::constant(40, 30, 0.25);
        let out = bilinear_resize(&img, 80, 60);
        assert!(out.pixels().iter().all(|&p| (p - 0.25).abs() < 1e-6));
    }

    #[test]
    fn rotation_moves_pixels() {
        let img = LumaImage::from_fn(64, 64, |x, _| if x < 32 { 0.0 } else { 1.0 });
        let out = affine_warp(
            &img,
            &AffineParams { rotation_degrees: 90.0, ..AffineParams::identity() },
        );
        // A vertical edge becomes horizontal.
        assert!((out.get(10, 10) - out.get(50, 10)).abs() < 0.05);
        assert!((out.get(10, 10) - out.get(10, 50)).abs() > 0.9);
    }
}
