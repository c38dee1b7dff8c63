//! Frozen feature extractor.
//!
//! Patchwise random-projection backbone with two feature groups: a raw-pixel
//! group with a sinusoidal position term and a high-pass group computed from
//! each patch's local box residual. Features are tanh-squashed and mean-pooled
//! over the patch grid. Weights are seeded and never trained.

mod embedfile;

pub use embedfile::{
    load_embeddings, save_embeddings, EmbedFileError, EmbeddingReader, EmbeddingRecord,
};

use crate::imagekit::RgbImage;
use crate::rng::derive_rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("out_dim must be even and at least 2, got {0}")]
    BadOutDim(u32),
    #[error("patch_size must be at least 1")]
    ZeroPatch,
    #[error("image {width}x{height} not divisible by patch size {patch_size}")]
    NonDivisiblePatch { width: u32, height: u32, patch_size: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneSpec {
    pub seed: u64,
    pub patch_size: u32,
    pub out_dim: u32,
    /// Scale on the raw-pixel projection before tanh.
    pub raw_gain: f32,
    /// Scale on the box-residual projection before tanh.
    pub residual_gain: f32,
    /// Weight of the sinusoidal patch-position term (raw group only).
    pub pos_strength: f32,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            patch_size: 14,
            out_dim: 64,
            raw_gain: 3.5,
            residual_gain: 36.0,
            pos_strength: 0.6,
        }
    }
}

impl BackboneSpec {
    pub fn validate(&self) -> Result<(), BackboneError> {
        if self.patch_size == 0 {
            return Err(BackboneError::ZeroPatch);
        }
        if self.out_dim < 2 || !self.out_dim.is_multiple_of(2) {
            return Err(BackboneError::BadOutDim(self.out_dim));
        }
        Ok(())
    }
}

pub struct ToyBackbone {
    spec: BackboneSpec,
    /// Row-major (half x patch_dim) projection for raw pixels.
    w_raw: Vec<f32>,
    /// Row-major (half x patch_dim) projection for box residuals.
    w_residual: Vec<f32>,
    /// Sinusoidal frequency per raw output dim.
    pos_freq: Vec<f32>,
}

impl ToyBackbone {
    pub fn new(spec: &BackboneSpec) -> Result<Self, BackboneError> {
        spec.validate()?;
        let half = (spec.out_dim / 2) as usize;
        let ps = spec.patch_size as usize;
        let patch_dim = ps * ps * 3;
        let draw = |domain: &str| {
            let mut rng = derive_rng(spec.seed, domain, &[]);
            let mut w: Vec<f32> = (0..half * patch_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            for row in w.chunks_exact_mut(patch_dim) {
                symmetrize_mirror(row, ps);
            }
            w
        };
        let w_raw = draw("raw_weights");
        let w_residual = draw("residual_weights");
        let pos_freq = (0..half)
            .map(|j| {
                let pair = (j / 2) as f32;
                (10_000.0f32).powf(-pair / (half as f32 / 2.0))
            })
            .collect();
        Ok(Self { spec: spec.clone(), w_raw, w_residual, pos_freq })
    }

    pub fn out_dim(&self) -> usize {
        self.spec.out_dim as usize
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    /// Embeds one image. The image must be tiled exactly by the patch size.
    pub fn embed(&self, img: &RgbImage) -> Result<Vec<f32>, BackboneError> {
        let ps = self.spec.patch_size;
        let (w, h) = (img.width(), img.height());
        if w % ps != 0 || h % ps != 0 || w == 0 || h == 0 {
            return Err(BackboneError::NonDivisiblePatch { width: w, height: h, patch_size: ps });
        }
        let ps = ps as usize;
        let cols = w as usize / ps;
        let rows = h as usize / ps;
        let half = (self.spec.out_dim / 2) as usize;
        let patch_dim = ps * ps * 3;
        let raw_scale = self.spec.raw_gain / (patch_dim as f32).sqrt();
        let residual_scale = self.spec.residual_gain / (patch_dim as f32).sqrt();

        let mut patch = vec![0.0f32; patch_dim];
        let mut residual = vec![0.0f32; patch_dim];
        let mut pooled = vec![0.0f64; self.out_dim()];
        let mut pos_row = vec![0.0f32; half];
        for pr in 0..rows {
            // position code keyed by the patch row only, so horizontal
            // flips stay inside the mirror invariance
            let index = pr as f32;
            for (j, pos) in pos_row.iter_mut().enumerate() {
                let angle = index * self.pos_freq[j];
                *pos = if j % 2 == 0 { angle.sin() } else { angle.cos() };
            }
            for pc in 0..cols {
                for y in 0..ps {
                    let row = img.get_pixel_row((pr * ps + y) as u32);
                    let base = (pc * ps) * 3;
                    let dst = &mut patch[y * ps * 3..(y + 1) * ps * 3];
                    for (d, s) in dst.iter_mut().zip(&row[base..base + ps * 3]) {
                        *d = *s as f32 / 255.0;
                    }
                }
                box_residual(&patch, ps, &mut residual);
                for j in 0..half {
                    let dot = dot_lanes(&self.w_raw[j * patch_dim..(j + 1) * patch_dim], &patch);
                    pooled[j] += (raw_scale * dot + self.spec.pos_strength * pos_row[j]).tanh()
                        as f64;
                    let dot_r = dot_lanes(
                        &self.w_residual[j * patch_dim..(j + 1) * patch_dim],
                        &residual,
                    );
                    pooled[half + j] += (residual_scale * dot_r).tanh() as f64;
                }
            }
        }
        let inv = 1.0 / (rows * cols) as f64;
        Ok(pooled.iter().map(|v| (v * inv) as f32).collect())
    }
}

/// Eight-lane dot product; the fixed lane layout keeps results reproducible
/// while letting the reduction vectorize.
fn dot_lanes(w: &[f32], x: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let mut wc = w.chunks_exact(8);
    let mut xc = x.chunks_exact(8);
    for (wi, xi) in (&mut wc).zip(&mut xc) {
        for l in 0..8 {
            acc[l] += wi[l] * xi[l];
        }
    }
    let tail: f32 =
        wc.remainder().iter().zip(xc.remainder()).map(|(a, b)| a * b).sum();
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Averages each weight patch with its left-right mirror (rescaled to keep
/// unit variance), making features invariant to horizontal flips of patch
/// content. Encoders pretrained with flip augmentation behave the same way;
/// vertical flips get no such pass.
fn symmetrize_mirror(row: &mut [f32], ps: usize) {
    let sqrt2 = std::f32::consts::SQRT_2;
    for y in 0..ps {
        for x in 0..ps / 2 {
            for c in 0..3 {
                let i = (y * ps + x) * 3 + c;
                let k = (y * ps + (ps - 1 - x)) * 3 + c;
                let m = (row[i] + row[k]) / 2.0 * sqrt2;
                row[i] = m;
                row[k] = m;
            }
        }
    }
}

/// Per-patch 3x3 box residual with edges clamped inside the patch, so the
/// result depends only on the patch content, never on its neighbors. A
/// constant patch yields an exactly zero residual.
fn box_residual(patch: &[f32], ps: usize, out: &mut [f32]) {
    let at = |x: isize, y: isize, c: usize| {
        let x = x.clamp(0, ps as isize - 1) as usize;
        let y = y.clamp(0, ps as isize - 1) as usize;
        patch[(y * ps + x) * 3 + c]
    };
    for y in 0..ps {
        for x in 0..ps {
            for c in 0..3 {
                let mut s = 0.0f32;
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        s += at(x as isize + dx, y as isize + dy, c);
                    }
                }
                out[(y * ps + x) * 3 + c] = patch[(y * ps + x) * 3 + c] - s / 9.0;
            }
        }
    }
}

trait PixelRows {
    fn get_pixel_row(&self, y: u32) -> &[u8];
}

impl PixelRows for RgbImage {
    fn get_pixel_row(&self, y: u32) -> &[u8] {
        let w = self.width() as usize * 3;
        &self.as_raw()[y as usize * w..(y as usize + 1) * w]
    }
}
