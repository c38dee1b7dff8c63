//! Train-time augmentation pipeline and the disruption operators.

use super::{
    gaussian_blur, horizontal_flip, jpeg_roundtrip, patch_shuffle, resize_bilinear, rotate,
    vertical_flip, crop, ImageOpError, RgbImage,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Stochastic train-path preprocessing: resize, random crop, then optional
/// blur and optional JPEG compression, blur first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationPolicy {
    pub resize_to: u32,
    pub crop_to: u32,
    pub blur_prob: f64,
    pub blur_sigma_range: (f32, f32),
    pub jpeg_prob: f64,
    pub jpeg_quality_range: (u8, u8),
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            resize_to: 256,
            crop_to: 224,
            blur_prob: 0.5,
            blur_sigma_range: (0.0, 3.0),
            jpeg_prob: 0.5,
            jpeg_quality_range: (30, 100),
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<(), ImageOpError> {
        let bad = |m: String| Err(ImageOpError::BadPolicy(m));
        if self.crop_to == 0 || self.resize_to < self.crop_to {
            return bad(format!("resize_to {} must be >= crop_to {} > 0", self.resize_to, self.crop_to));
        }
        if !(0.0..=1.0).contains(&self.blur_prob) || !(0.0..=1.0).contains(&self.jpeg_prob) {
            return bad("probabilities must lie in [0, 1]".into());
        }
        let (slo, shi) = self.blur_sigma_range;
        if slo < 0.0 || shi < slo {
            return bad(format!("blur sigma range [{slo}, {shi}] invalid"));
        }
        let (qlo, qhi) = self.jpeg_quality_range;
        if qlo == 0 || qhi > 100 || qhi < qlo {
            return bad(format!("jpeg quality range [{qlo}, {qhi}] invalid"));
        }
        Ok(())
    }
}

/// Applies the train-path augmentation. The rng stream layout is fixed: crop
/// x, crop y, blur gate, blur sigma, jpeg gate, jpeg quality are always drawn
/// in that order, whether or not the gates fire, so downstream draws never
/// shift with the gate outcomes.
pub fn augment(
    img: &RgbImage,
    policy: &AugmentationPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<RgbImage, ImageOpError> {
    policy.validate()?;
    let resized = resize_bilinear(img, policy.resize_to, policy.resize_to)?;
    let span = policy.resize_to - policy.crop_to;
    let cx = rng.gen_range(0..=span);
    let cy = rng.gen_range(0..=span);
    let mut out = crop(&resized, cx, cy, policy.crop_to, policy.crop_to)?;

    let blur_fire = rng.gen::<f64>() < policy.blur_prob;
    let sigma = rng.gen_range(policy.blur_sigma_range.0..=policy.blur_sigma_range.1);
    let jpeg_fire = rng.gen::<f64>() < policy.jpeg_prob;
    let quality = rng.gen_range(policy.jpeg_quality_range.0..=policy.jpeg_quality_range.1);

    if blur_fire {
        out = gaussian_blur(&out, sigma)?;
    }
    if jpeg_fire {
        out = jpeg_roundtrip(&out, quality)?;
    }
    Ok(out)
}

/// Eval-path preprocessing: plain resize to the crop size, no randomness.
pub fn eval_preprocess(img: &RgbImage, crop_to: u32) -> Result<RgbImage, ImageOpError> {
    resize_bilinear(img, crop_to, crop_to)
}

/// Structural disruption applied to the second branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Disruption {
    PatchShuffle {
        #[serde(default = "default_patch_size")]
        patch_size: u32,
    },
    HorizontalFlip,
    VerticalFlip,
    RandomRotation {
        #[serde(default = "default_rotation_range")]
        rotation_range_deg: (f32, f32),
    },
}

fn default_patch_size() -> u32 {
    14
}

fn default_rotation_range() -> (f32, f32) {
    (0.0, 180.0)
}

impl Default for Disruption {
    fn default() -> Self {
        Disruption::PatchShuffle { patch_size: default_patch_size() }
    }
}

/// Applies a disruption. Flips consume no randomness; patch shuffle and
/// random rotation consume draws from the given stream.
pub fn disrupt(
    img: &RgbImage,
    disruption: &Disruption,
    rng: &mut ChaCha8Rng,
) -> Result<RgbImage, ImageOpError> {
    match disruption {
        Disruption::PatchShuffle { patch_size } => patch_shuffle(img, *patch_size, rng),
        Disruption::HorizontalFlip => Ok(horizontal_flip(img)),
        Disruption::VerticalFlip => Ok(vertical_flip(img)),
        Disruption::RandomRotation { rotation_range_deg: (lo, hi) } => {
            if hi < lo {
                return Err(ImageOpError::BadPolicy(format!("rotation range [{lo}, {hi}] invalid")));
            }
            let angle = rng.gen_range(*lo..=*hi);
            Ok(rotate(img, angle))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use rand::Rng;

    fn random_image(seed: u64, w: u32, h: u32) -> RgbImage {
        let mut rng = derive_rng(seed, "aug_img", &[]);
        RgbImage::from_fn(w, h, |_, _| image::Rgb([rng.gen(), rng.gen(), rng.gen()]))
    }

    #[test]
    fn output_has_crop_dimensions() {
        let img = random_image(1, 224, 224);
        let out = augment(&img, &AugmentationPolicy::default(), &mut derive_rng(2, "a", &[])).unwrap();
        assert_eq!(out.dimensions(), (224, 224));
    }

    #[test]
    fn zero_probabilities_reduce_to_resize_and_crop() {
        let img = random_image(3, 200, 200);
        let policy = AugmentationPolicy { blur_prob: 0.0, jpeg_prob: 0.0, ..Default::default() };
        let mut rng = derive_rng(4, "a", &[]);
        let out = augment(&img, &policy, &mut rng).unwrap();
        // reproduce by hand with the same stream layout
        let mut rng2 = derive_rng(4, "a", &[]);
        let resized = resize_bilinear(&img, 256, 256).unwrap();
        let cx = rng2.gen_range(0..=32u32);
        let cy = rng2.gen_range(0..=32u32);
        let manual = crop(&resized, cx, cy, 224, 224).unwrap();
        assert_eq!(out, manual);
    }

    #[test]
    fn same_stream_same_output() {
        let img = random_image(5, 240, 240);
        let policy = AugmentationPolicy::default();
        let a = augment(&img, &policy, &mut derive_rng(6, "a", &[])).unwrap();
        let b = augment(&img, &policy, &mut derive_rng(6, "a", &[])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_policy_is_rejected() {
        let img = random_image(7, 64, 64);
        let policy = AugmentationPolicy { resize_to: 100, crop_to: 128, ..Default::default() };
        assert!(augment(&img, &policy, &mut derive_rng(8, "a", &[])).is_err());
        let policy = AugmentationPolicy { blur_sigma_range: (2.0, 1.0), ..Default::default() };
        assert!(augment(&img, &policy, &mut derive_rng(8, "a", &[])).is_err());
    }

    #[test]
    fn disruption_serde_round_trips_spelled_fields() {
        let d: Disruption = serde_json::from_str(r#"{"kind":"patch_shuffle","patch_size":28}"#).unwrap();
        assert_eq!(d, Disruption::PatchShuffle { patch_size: 28 });
        let d: Disruption = serde_json::from_str(r#"{"kind":"patch_shuffle"}"#).unwrap();
        assert_eq!(d, Disruption::PatchShuffle { patch_size: 14 });
        let d: Disruption = serde_json::from_str(r#"{"kind":"random_rotation"}"#).unwrap();
        assert_eq!(d, Disruption::RandomRotation { rotation_range_deg: (0.0, 180.0) });
        let j = serde_json::to_string(&Disruption::VerticalFlip).unwrap();
        assert_eq!(j, r#"{"kind":"vertical_flip"}"#);
    }

    #[test]
    fn flip_disruptions_consume_no_draws() {
        let img = random_image(9, 28, 28);
        let mut rng = derive_rng(10, "d", &[]);
        let before = rng.clone();
        disrupt(&img, &Disruption::HorizontalFlip, &mut rng).unwrap();
        let mut after = before.clone();
        assert_eq!(rng.gen::<u64>(), after.gen::<u64>());
    }
}
