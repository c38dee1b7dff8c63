//! Pixel operators over 8-bit RGB images.
//!
//! Interior arithmetic runs in f32 or wider; results quantize to 8-bit exactly
//! once at each operator boundary (round half away from zero, clamp to
//! [0, 255]). Randomized operators take an explicit RNG stream so callers
//! control determinism.

mod augment;
mod jpeg;
mod ops;
mod shuffle;

pub use augment::{augment, eval_preprocess, disrupt, AugmentationPolicy, Disruption};
pub use jpeg::jpeg_roundtrip;
pub use ops::{
    crop, gaussian_blur, gaussian_kernel, horizontal_flip, resize_bilinear, rotate, vertical_flip,
};
pub use shuffle::patch_shuffle;

pub use image::RgbImage;

use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageOpError {
    #[error("image {width}x{height} is not divisible into {patch_size}x{patch_size} patches")]
    NonDivisiblePatch { width: u32, height: u32, patch_size: u32 },
    #[error("jpeg quality {0} outside 1..=100")]
    BadQuality(u8),
    #[error("blur sigma {0} is negative")]
    NegativeSigma(f32),
    #[error("crop {x},{y} {width}x{height} exceeds source {src_width}x{src_height}")]
    BadCrop { x: u32, y: u32, width: u32, height: u32, src_width: u32, src_height: u32 },
    #[error("patch size must be nonzero")]
    ZeroPatch,
    #[error("target dimensions must be nonzero")]
    ZeroTarget,
    #[error("augmentation policy invalid: {0}")]
    BadPolicy(String),
    #[error("codec failure: {0}")]
    Codec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Quantizes one interior value to the 8-bit range.
#[inline]
pub fn quantize_u8(v: f32) -> u8 {
    // f32::round ties away from zero, matching the quantization contract.
    v.round().clamp(0.0, 255.0) as u8
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<(), ImageOpError> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| ImageOpError::Codec(e.to_string()))
}

pub fn load_png(path: &Path) -> Result<RgbImage, ImageOpError> {
    let img = image::open(path).map_err(|e| ImageOpError::Codec(e.to_string()))?;
    Ok(img.to_rgb8())
}

/// Writes a row-major grid of values as an 8-bit grayscale PNG, min-max
/// normalized over the grid. A constant grid renders as all black.
pub fn save_gray_png(
    values: &[f64],
    width: u32,
    height: u32,
    path: &Path,
) -> Result<(), ImageOpError> {
    if width == 0 || height == 0 || values.len() != (width * height) as usize {
        return Err(ImageOpError::ZeroTarget);
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let pixels: Vec<u8> = values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                quantize_u8(((v - lo) / span * 255.0) as f32)
            } else {
                0
            }
        })
        .collect();
    let img = image::GrayImage::from_raw(width, height, pixels)
        .expect("buffer length was checked against the dimensions");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| ImageOpError::Codec(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rounds_half_away_from_zero() {
        assert_eq!(quantize_u8(0.5), 1);
        assert_eq!(quantize_u8(1.5), 2);
        assert_eq!(quantize_u8(2.4999), 2);
        assert_eq!(quantize_u8(-0.6), 0);
        assert_eq!(quantize_u8(255.5), 255);
        assert_eq!(quantize_u8(300.0), 255);
    }

    #[test]
    fn png_roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = RgbImage::from_fn(9, 7, |x, y| image::Rgb([x as u8 * 20, y as u8 * 30, 5]));
        save_png(&img, &path).unwrap();
        assert_eq!(load_png(&path).unwrap(), img);
    }

    #[test]
    fn gray_png_normalizes_over_the_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        save_gray_png(&[0.25, 0.5, 0.5, 0.75], 2, 2, &path).unwrap();
        let img = image::open(&path).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (2, 2));
        assert_eq!(img.as_raw(), &vec![0, 128, 128, 255]);

        let flat = dir.path().join("flat.png");
        save_gray_png(&[0.3; 6], 3, 2, &flat).unwrap();
        let img = image::open(&flat).unwrap().to_luma8();
        assert!(img.as_raw().iter().all(|&p| p == 0));

        assert!(save_gray_png(&[1.0; 3], 2, 2, &path).is_err());
    }
}
