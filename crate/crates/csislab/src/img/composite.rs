//! Foreground occlusion: pastes an occluder over a scene at a controlled
//! fraction of the field of view, for the occlusion ablation.

use super::transform::bilinear_resize;
use super::{ImageOpsError, LumaImage};

/// Pastes `occluder` scaled so its area is `fov_fraction` of the scene
/// area, anchored at the horizontal center and aligned to the bottom edge.
/// Parts that would fall outside the frame are clipped.
pub fn composite_foreground(
    scene: &LumaImage,
    occluder: &LumaImage,
    fov_fraction: f64,
) -> Result<LumaImage, ImageOpsError> {
    if !(0.0..=1.0).contains(&fov_fraction) || !fov_fraction.is_finite() {
        return Err(ImageOpsError::InvalidFraction(fov_fraction));
    }
    if fov_fraction == 0.0 {
        return Ok(scene.clone());
    }
    let scene_area = scene.width() as f64 * scene.height() as f64;
    let occ_area = occluder.width() as f64 * occluder.height() as f64;
    let scale = (fov_fraction * scene_area / occ_area).sqrt();
    let new_w = ((occluder.width() as f64 * scale).round() as u32).max(1);
    let new_h = ((occluder.height() as f64 * scale).round() as u32).max(1);
    let scaled = bilinear_resize(occluder, new_w, new_h);

    let mut pixels = scene.pixels().to_vec();
    let sw = scene.width() as i64;
    let sh = scene.height() as i64;
    let x0 = (sw - new_w as i64) / 2;
    let y0 = sh - new_h as i64;
    for oy in 0..new_h as i64 {
        let ty = y0 + oy;
        if ty < 0 || ty >= sh {
            continue;
        }
        for ox in 0..new_w as i64 {
            let tx = x0 + ox;
            if tx < 0 || tx >= sw {
                continue;
            }
            pixels[(ty * sw + tx) as usize] = scaled.get(ox as u32, oy as u32);
        }
    }
    Ok(LumaImage { width: scene.width(), height: scene.height(), pixels })
}
