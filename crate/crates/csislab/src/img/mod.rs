//! Luminance images, file IO, and the photometric/geometric transforms the
//! augmentation generator and the robustness suite are built from.

mod augment;
mod composite;
mod transform;
mod variation;

use std::io::Cursor;
use std::path::Path;

use thiserror::Error;

pub use augment::{augment, AugmentationConfig};
pub use composite::composite_foreground;
pub use transform::{affine_warp, bilinear_resize, perspective_warp, AffineParams, Homography};
pub use variation::{apply_variation, VariationLevel, VariationName};

#[derive(Debug, Error)]
pub enum ImageOpsError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to decode image{}: {source}", path.as_ref().map(|p| format!(" {p}")).unwrap_or_default())]
    Decode {
        path: Option<String>,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to encode image: {0}")]
    Encode(#[source] image::ImageError),
    #[error("invalid pixel buffer: {0}")]
    InvalidPixels(String),
    #[error("reference set is empty")]
    EmptyReferenceSet,
    #[error("field-of-view fraction {0} is outside [0, 1]")]
    InvalidFraction(f64),
    #[error("augmentation target {target} is below the source count {sources}")]
    TargetBelowSourceCount { target: usize, sources: usize },
}

/// Row-major luminance plane with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct LumaImage {
    width: u32,
    height: u32,
    pixels: Vec<f32>,
}

/// BT.601 luma weights, the convention the DCT hash pipeline expects.
const LUMA_R: f32 = 0.299;
const LUMA_G: f32 = 0.587;
const LUMA_B: f32 = 0.114;

impl LumaImage {
    pub fn new(width: u32, height: u32, pixels: Vec<f32>) -> Result<Self, ImageOpsError> {
        if width == 0 || height == 0 {
            return Err(ImageOpsError::InvalidPixels("zero width or height".into()));
        }
        if pixels.len() != (width as usize) * (height as usize) {
            return Err(ImageOpsError::InvalidPixels(format!(
                "expected {} pixels for {width}x{height}, got {}",
                (width as usize) * (height as usize),
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
            return Err(ImageOpsError::InvalidPixels(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(LumaImage { width, height, pixels })
    }

    /// Builds from a generator; values are clamped into [0, 1].
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        LumaImage { width, height, pixels }
    }

    pub fn constant(width: u32, height: u32, value: f32) -> Self {
        LumaImage {
            width,
            height,
            pixels: vec![value.clamp(0.0, 1.0); width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    /// Edge-replicated sample: coordinates outside the frame clamp to the
    /// nearest border pixel.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> f32 {
        let xc = x.clamp(0, self.width as i64 - 1) as usize;
        let yc = y.clamp(0, self.height as i64 - 1) as usize;
        self.pixels[yc * self.width as usize + xc]
    }

    pub fn mean(&self) -> f32 {
        (self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64) as f32
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        LumaImage {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| f(p).clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn decode_file(path: impl AsRef<Path>) -> Result<Self, ImageOpsError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| ImageOpsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::decode_bytes(&bytes).map_err(|e| match e {
            ImageOpsError::Decode { source, .. } => ImageOpsError::Decode {
                path: Some(path.display().to_string()),
                source,
            },
            other => other,
        })
    }

    pub fn decode_bytes(bytes: &[u8]) -> Result<Self, ImageOpsError> {
        let dynimg = image::load_from_memory(bytes)
            .map_err(|source| ImageOpsError::Decode { path: None, source })?;
        Ok(Self::from_dynamic(&dynimg))
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> Self {
        use image::DynamicImage::*;
        match img {
            ImageLuma8(g) => LumaImage {
                width: g.width(),
                height: g.height(),
                pixels: g.pixels().map(|p| p.0[0] as f32 / 255.0).collect(),
            },
            ImageLumaA8(g) => LumaImage {
                width: g.width(),
                height: g.height(),
                pixels: g.pixels().map(|p| p.0[0] as f32 / 255.0).collect(),
            },
            other => {
                let rgb = other.to_rgb8();
                LumaImage {
                    width: rgb.width(),
                    height: rgb.height(),
                    pixels: rgb
                        .pixels()
                        .map(|p| {
                            (p.0[0] as f32 * LUMA_R
                                + p.0[1] as f32 * LUMA_G
                                + p.0[2] as f32 * LUMA_B)
                                / 255.0
                        })
                        .collect(),
                }
            }
        }
    }

    fn to_luma8(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width, self.height, |x, y| {
            image::Luma([(self.get(x, y) * 255.0).round().clamp(0.0, 255.0) as u8])
        })
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImageOpsError> {
        let mut out = Cursor::new(Vec::new());
        self.to_luma8()
            .write_to(&mut out, image::ImageFormat::Png)
            .map_err(ImageOpsError::Encode)?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImageOpsError> {
        let path = path.as_ref();
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|source| ImageOpsError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn encode_jpeg(&self, jpeg_quality: u8) -> Result<Vec<u8>, ImageOpsError> {
        let mut out = Cursor::new(Vec::new());
        let encoder =
            image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, jpeg_quality);
        self.to_luma8().write_with_encoder(encoder).map_err(ImageOpsError::Encode)?;
        Ok(out.into_inner())
    }

    pub fn save_jpeg(&self, path: impl AsRef<Path>, jpeg_quality: u8) -> Result<(), ImageOpsError> {
        let path = path.as_ref();
        let bytes = self.encode_jpeg(jpeg_quality)?;
        std::fs::write(path, bytes).map_err(|source| ImageOpsError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Lossy round trip through the JPEG codec, as the robustness suite
    /// applies it.
    pub fn jpeg_roundtrip(&self, jpeg_quality: u8) -> Result<Self, ImageOpsError> {
        Self::decode_bytes(&self.encode_jpeg(jpeg_quality)?)
    }

    /// Central crop keeping `fraction` of each side; the result keeps at
    /// least one pixel per axis.
    pub fn center_crop(&self, fraction: f32) -> Self {
        let frac = fraction.clamp(0.0, 1.0);
        let cw = ((self.width as f32 * frac).round() as u32).clamp(1, self.width);
        let ch = ((self.height as f32 * frac).round() as u32).clamp(1, self.height);
        let x0 = (self.width - cw) / 2;
        let y0 = (self.height - ch) / 2;
        LumaImage::from_fn(cw, ch, |x, y| self.get(x0 + x, y0 + y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_buffers() {
        assert!(LumaImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(LumaImage::new(2, 2, vec![0.0, 0.5, 1.0, 1.5]).is_err());
        assert!(LumaImage::new(0, 2, vec![]).is_err());
        assert!(LumaImage::new(2, 2, vec![0.0, 0.5, 1.0, f32::NAN]).is_err());
        assert!(LumaImage::new(2, 2, vec![0.0, 0.5, 1.0, 1.0]).is_ok());
    }

    #[test]
    fn png_round_trip_preserves_quantized_pixels() {
        let img = LumaImage::from_fn(20, 10, |x, y| ((x + y) % 256) as f32 / 255.0);
        let bytes = img.encode_png().unwrap();
        let back = LumaImage::decode_bytes(&bytes).unwrap();
        assert_eq!(back.width(), 20);
        assert_eq!(back.height(), 10);
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() < 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn center_crop_half_takes_central_region() {
        let img = LumaImage::from_fn(100, 100, |x, y| if x >= 25 && x < 75 && y >= 25 && y < 75 {
            1.0
        } else {
            0.0
        });
        let cropped = img.center_crop(0.5);
        assert_eq!((cropped.width(), cropped.height()), (50, 50));
        assert!(cropped.pixels().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn edge_clamped_sampling() {
        let img = LumaImage::from_fn(4, 4, |x, _| x as f32 / 3.0);
        assert_eq!(img.get_clamped(-5, 2), img.get(0, 2));
        assert_eq!(img.get_clamped(9, 0), img.get(3, 0));
    }
}
