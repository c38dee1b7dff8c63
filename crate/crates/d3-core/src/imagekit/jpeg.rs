//! Baseline JPEG round-trip used as a realistic degradation.

use super::{ImageOpError, RgbImage};
use jpeg_encoder::{ColorType, Encoder, SamplingFactor};

/// Encodes at the given quality with baseline tables and 4:2:0 chroma
/// subsampling, then decodes. Deterministic: same input and quality give the
/// same bytes back.
pub fn jpeg_roundtrip(img: &RgbImage, quality: u8) -> Result<RgbImage, ImageOpError> {
    if quality == 0 || quality > 100 {
        return Err(ImageOpError::BadQuality(quality));
    }
    let (w, h) = img.dimensions();
    let mut buf = Vec::new();
    let mut enc = Encoder::new(&mut buf, quality);
    enc.set_sampling_factor(SamplingFactor::F_2_2);
    enc.encode(img.as_raw(), w as u16, h as u16, ColorType::Rgb)
        .map_err(|e| ImageOpError::Codec(e.to_string()))?;
    let decoded = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)
        .map_err(|e| ImageOpError::Codec(e.to_string()))?;
    Ok(decoded.to_rgb8())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use rand::Rng;

    #[test]
    fn preserves_dimensions() {
        let img = RgbImage::from_pixel(50, 34, image::Rgb([120, 60, 200]));
        let out = jpeg_roundtrip(&img, 75).unwrap();
        assert_eq!(out.dimensions(), (50, 34));
    }

    #[test]
    fn quality_100_midgray_is_exact() {
        let img = RgbImage::from_pixel(48, 48, image::Rgb([128, 128, 128]));
        assert_eq!(jpeg_roundtrip(&img, 100).unwrap(), img);
    }

    #[test]
    fn rejects_out_of_range_quality() {
        let img = RgbImage::from_pixel(8, 8, image::Rgb([0, 0, 0]));
        assert!(matches!(jpeg_roundtrip(&img, 0), Err(ImageOpError::BadQuality(0))));
        assert!(matches!(jpeg_roundtrip(&img, 101), Err(ImageOpError::BadQuality(101))));
    }

    #[test]
    fn second_pass_at_same_quality_changes_less() {
        let mut rng = derive_rng(1, "jpeg_img", &[]);
        let img = RgbImage::from_fn(64, 64, |_, _| image::Rgb([rng.gen(), rng.gen(), rng.gen()]));
        let once = jpeg_roundtrip(&img, 30).unwrap();
        let twice = jpeg_roundtrip(&once, 30).unwrap();
        let mean = |a: &RgbImage, b: &RgbImage| {
            a.as_raw()
                .iter()
                .zip(b.as_raw())
                .map(|(x, y)| (*x as f64 - *y as f64).abs())
                .sum::<f64>()
                / a.as_raw().len() as f64
        };
        assert!(mean(&once, &twice) <= mean(&img, &once));
    }

    #[test]
    fn deterministic_roundtrip() {
        let mut rng = derive_rng(2, "jpeg_img", &[]);
        let img = RgbImage::from_fn(32, 32, |_, _| image::Rgb([rng.gen(), rng.gen(), rng.gen()]));
        assert_eq!(jpeg_roundtrip(&img, 42).unwrap(), jpeg_roundtrip(&img, 42).unwrap());
    }
}
