//! Deterministic geometric and filtering operators.

use super::{quantize_u8, ImageOpError, RgbImage};

pub fn horizontal_flip(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    RgbImage::from_fn(w, h, |x, y| *img.get_pixel(w - 1 - x, y))
}

pub fn vertical_flip(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    RgbImage::from_fn(w, h, |x, y| *img.get_pixel(x, h - 1 - y))
}

pub fn crop(img: &RgbImage, x: u32, y: u32, width: u32, height: u32) -> Result<RgbImage, ImageOpError> {
    let (sw, sh) = img.dimensions();
    if width == 0 || height == 0 {
        return Err(ImageOpError::ZeroTarget);
    }
    if x + width > sw || y + height > sh {
        return Err(ImageOpError::BadCrop { x, y, width, height, src_width: sw, src_height: sh });
    }
    Ok(RgbImage::from_fn(width, height, |cx, cy| *img.get_pixel(x + cx, y + cy)))
}

/// Bilinear resize with half-pixel centers. Identity dimensions copy exactly.
pub fn resize_bilinear(img: &RgbImage, width: u32, height: u32) -> Result<RgbImage, ImageOpError> {
    if width == 0 || height == 0 {
        return Err(ImageOpError::ZeroTarget);
    }
    let (sw, sh) = img.dimensions();
    if (width, height) == (sw, sh) {
        return Ok(img.clone());
    }
    let src = img.as_raw();
    let sx_scale = sw as f32 / width as f32;
    let sy_scale = sh as f32 / height as f32;
    let mut out = vec![0u8; (width * height * 3) as usize];
    for y in 0..height {
        let sy = (y as f32 + 0.5) * sy_scale - 0.5;
        let y0 = (sy.floor() as i64).clamp(0, sh as i64 - 1) as usize;
        let y1 = (y0 + 1).min(sh as usize - 1);
        let fy = (sy - sy.floor()).clamp(0.0, 1.0);
        for x in 0..width {
            let sx = (x as f32 + 0.5) * sx_scale - 0.5;
            let x0 = (sx.floor() as i64).clamp(0, sw as i64 - 1) as usize;
            let x1 = (x0 + 1).min(sw as usize - 1);
            let fx = (sx - sx.floor()).clamp(0.0, 1.0);
            let row0 = y0 * sw as usize;
            let row1 = y1 * sw as usize;
            let o = ((y * width + x) * 3) as usize;
            for c in 0..3 {
                let p00 = src[(row0 + x0) * 3 + c] as f32;
                let p01 = src[(row0 + x1) * 3 + c] as f32;
                let p10 = src[(row1 + x0) * 3 + c] as f32;
                let p11 = src[(row1 + x1) * 3 + c] as f32;
                let top = p00 + (p01 - p00) * fx;
                let bot = p10 + (p11 - p10) * fx;
                out[o + c] = quantize_u8(top + (bot - top) * fy);
            }
        }
    }
    Ok(RgbImage::from_raw(width, height, out).expect("sized above"))
}

const ROTATE_FILL: f32 = 128.0;

/// Rotates counterclockwise about the image center with bilinear sampling.
/// Output keeps the input dimensions; samples falling outside the frame read
/// as mid-gray 128.
pub fn rotate(img: &RgbImage, degrees: f32) -> RgbImage {
    let (w, h) = img.dimensions();
    let src = img.as_raw();
    let cx = (w as f32 - 1.0) / 2.0;
    let cy = (h as f32 - 1.0) / 2.0;
    let theta = (degrees as f64).to_radians();
    let (sin_t, cos_t) = (theta.sin() as f32, theta.cos() as f32);
    let mut out = vec![0u8; (w * h * 3) as usize];
    let fetch = |x: i64, y: i64, c: usize| -> f32 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            ROTATE_FILL
        } else {
            src[((y as u32 * w + x as u32) * 3) as usize + c] as f32
        }
    };
    for y in 0..h {
        let dy = y as f32 - cy;
        for x in 0..w {
            let dx = x as f32 - cx;
            // inverse map: where this output pixel came from
            let sx = cx + cos_t * dx + sin_t * dy;
            let sy = cy - sin_t * dx + cos_t * dy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (xi, yi) = (x0 as i64, y0 as i64);
            let o = ((y * w + x) * 3) as usize;
            for c in 0..3 {
                let p00 = fetch(xi, yi, c);
                let p01 = fetch(xi + 1, yi, c);
                let p10 = fetch(xi, yi + 1, c);
                let p11 = fetch(xi + 1, yi + 1, c);
                let top = p00 + (p01 - p00) * fx;
                let bot = p10 + (p11 - p10) * fx;
                out[o + c] = quantize_u8(top + (bot - top) * fy);
            }
        }
    }
    RgbImage::from_raw(w, h, out).expect("sized above")
}

/// Discrete Gaussian tap weights for radius ceil(3*sigma), normalized so the
/// f64 sum is exactly of unit mass within 1e-12. sigma = 0 yields [1].
pub fn gaussian_kernel(sigma: f32) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma as f64).ceil() as i64;
    let s2 = 2.0 * (sigma as f64) * (sigma as f64);
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / s2).exp()).collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with clamp-to-edge borders. sigma = 0 is the
/// byte-exact identity.
pub fn gaussian_blur(img: &RgbImage, sigma: f32) -> Result<RgbImage, ImageOpError> {
    if sigma < 0.0 {
        return Err(ImageOpError::NegativeSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let (w, h) = img.dimensions();
    let (wi, hi) = (w as i64, h as i64);
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let src = img.as_raw();

    // horizontal pass, f32 intermediate without quantization
    let mut mid = vec![0f32; src.len()];
    for y in 0..hi {
        let row = (y * wi * 3) as usize;
        for x in 0..wi {
            let mut acc = [0f32; 3];
            for (ti, kv) in kernel.iter().enumerate() {
                let sx = (x + ti as i64 - radius).clamp(0, wi - 1) as usize;
                let p = row + sx * 3;
                for c in 0..3 {
                    acc[c] += *kv as f32 * src[p + c] as f32;
                }
            }
            let o = row + (x as usize) * 3;
            mid[o..o + 3].copy_from_slice(&acc);
        }
    }

    // vertical pass, quantize at the boundary
    let mut out = vec![0u8; src.len()];
    for y in 0..hi {
        for x in 0..wi {
            let mut acc = [0f32; 3];
            for (ti, kv) in kernel.iter().enumerate() {
                let sy = (y + ti as i64 - radius).clamp(0, hi - 1);
                let p = ((sy * wi + x) * 3) as usize;
                for c in 0..3 {
                    acc[c] += *kv as f32 * mid[p + c];
                }
            }
            let o = ((y * wi + x) * 3) as usize;
            for c in 0..3 {
                out[o + c] = quantize_u8(acc[c]);
            }
        }
    }
    Ok(RgbImage::from_raw(w, h, out).expect("sized above"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use rand::Rng;

    fn random_image(seed: u64, w: u32, h: u32) -> RgbImage {
        let mut rng = derive_rng(seed, "test_img", &[w as u64, h as u64]);
        RgbImage::from_fn(w, h, |_, _| image::Rgb([rng.gen(), rng.gen(), rng.gen()]))
    }

    #[test]
    fn flips_are_involutions() {
        let img = random_image(1, 13, 9);
        assert_eq!(horizontal_flip(&horizontal_flip(&img)), img);
        assert_eq!(vertical_flip(&vertical_flip(&img)), img);
    }

    #[test]
    fn flip_moves_corner_pixel() {
        let mut img = RgbImage::from_pixel(4, 3, image::Rgb([0, 0, 0]));
        img.put_pixel(0, 0, image::Rgb([9, 9, 9]));
        assert_eq!(horizontal_flip(&img).get_pixel(3, 0).0, [9, 9, 9]);
        assert_eq!(vertical_flip(&img).get_pixel(0, 2).0, [9, 9, 9]);
    }

    #[test]
    fn rotate_zero_is_identity() {
        let img = random_image(2, 17, 17);
        assert_eq!(rotate(&img, 0.0), img);
    }

    #[test]
    fn rotate_180_square_matches_double_flip() {
        let img = random_image(3, 16, 16);
        let r = rotate(&img, 180.0);
        let f = vertical_flip(&horizontal_flip(&img));
        for (a, b) in r.as_raw().iter().zip(f.as_raw()) {
            assert!((*a as i16 - *b as i16).abs() <= 1, "{a} vs {b}");
        }
    }

    #[test]
    fn rotate_90_square_is_a_permutation() {
        let img = random_image(4, 12, 12);
        let r = rotate(&img, 90.0);
        let mut a: Vec<[u8; 3]> = img.pixels().map(|p| p.0).collect();
        let mut b: Vec<[u8; 3]> = r.pixels().map(|p| p.0).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn rotate_45_fills_corners_with_midgray() {
        let img = RgbImage::from_pixel(32, 32, image::Rgb([250, 10, 60]));
        let r = rotate(&img, 45.0);
        assert_eq!(r.get_pixel(0, 0).0, [128, 128, 128]);
        assert_eq!(r.get_pixel(31, 31).0, [128, 128, 128]);
    }

    #[test]
    fn resize_identity_is_exact() {
        let img = random_image(5, 21, 14);
        assert_eq!(resize_bilinear(&img, 21, 14).unwrap(), img);
    }

    #[test]
    fn resize_of_constant_image_is_constant() {
        let img = RgbImage::from_pixel(31, 17, image::Rgb([77, 200, 3]));
        let out = resize_bilinear(&img, 224, 96).unwrap();
        assert!(out.pixels().all(|p| p.0 == [77, 200, 3]));
    }

    #[test]
    fn crop_bounds_are_checked() {
        let img = random_image(6, 10, 10);
        assert!(crop(&img, 2, 3, 4, 4).is_ok());
        assert!(matches!(crop(&img, 8, 0, 4, 4), Err(ImageOpError::BadCrop { .. })));
    }

    #[test]
    fn kernel_mass_is_unit_within_1e12() {
        for sigma in [0.3f32, 0.5, 1.0, 1.7, 2.0, 3.0] {
            let k = gaussian_kernel(sigma);
            assert_eq!(k.len() as i64, 2 * (3.0 * sigma as f64).ceil() as i64 + 1);
            let sum: f64 = k.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "sigma {sigma}: sum {sum}");
        }
    }

    #[test]
    fn blur_zero_sigma_is_identity() {
        let img = random_image(7, 24, 24);
        assert_eq!(gaussian_blur(&img, 0.0).unwrap(), img);
    }

    #[test]
    fn blur_impulse_peak_matches_kernel_product() {
        // centered impulse of 255: blurred center = 255 * k0^2 within rounding
        let mut img = RgbImage::from_pixel(25, 25, image::Rgb([0, 0, 0]));
        img.put_pixel(12, 12, image::Rgb([255, 255, 255]));
        let sigma = 1.0f32;
        let k = gaussian_kernel(sigma);
        let k0 = k[k.len() / 2];
        let expect = 255.0 * k0 * k0;
        let got = gaussian_blur(&img, sigma).unwrap().get_pixel(12, 12).0[0] as f64;
        assert!((got - expect).abs() <= 1.0, "got {got}, expect {expect}");
    }

    #[test]
    fn blur_preserves_constant_images() {
        let img = RgbImage::from_pixel(20, 20, image::Rgb([99, 99, 99]));
        assert_eq!(gaussian_blur(&img, 2.0).unwrap(), img);
    }

    #[test]
    fn blur_rejects_negative_sigma() {
        let img = random_image(8, 8, 8);
        assert!(matches!(gaussian_blur(&img, -1.0), Err(ImageOpError::NegativeSigma(_))));
    }
}
