//! Deterministic image synthesis for both classes.
//!
//! Real: 1/f-spectrum noise base, 3 to 8 smooth-shaded shapes, Gaussian
//! sensor noise. Fake: the same scene plus amplitude-scaled fingerprints. All
//! randomness comes from seeds carried by the manifest, so regeneration is
//! bit-identical.

use super::{BenchmarkSpec, BenchError, Family, GeneratorSpec, Label, SampleRecord};
use crate::imagekit::{quantize_u8, RgbImage};
use crate::rng::{derive_rng, derive_seed};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Fingerprint waves live on this period so every patch of the default
/// disruption grid sees the same tile.
const WAVE_PERIOD: f32 = 14.0;

/// Wave-vector lattices (multiples of 1/14 cycles per pixel) per band.
const LOW_BAND: &[(i32, i32)] =
    &[(1, 0), (0, 1), (1, 1), (2, 0), (0, 2), (2, 1), (1, 2)];
const MID_BAND: &[(i32, i32)] = &[
    (3, 0), (0, 3), (3, 1), (1, 3), (2, 2), (4, 0), (0, 4), (3, 2), (2, 3), (4, 1), (1, 4),
    (3, 3), (4, 2), (2, 4),
];
const HIGH_BAND: &[(i32, i32)] = &[
    (7, 0), (0, 7), (5, 5), (6, 2), (2, 6), (7, 2), (2, 7), (5, 0), (0, 5), (6, 0), (0, 6),
    (4, 5), (5, 4),
];
/// The exact 2x2 checkerboard harmonic; always part of a gan_like comb.
const CHECKERBOARD: (i32, i32) = (7, 7);

const SENSOR_SIGMA: f32 = 2.0;
const SUPPORT_FRACTION: (f32, f32) = (0.40, 0.55);
const SUPPORT_EDGE: f32 = 8.0;

pub fn universal_seed(spec: &BenchmarkSpec) -> u64 {
    derive_seed(spec.master_seed, "universal", &[])
}

/// Renders the record's image from its seeds alone.
pub fn synth_record(spec: &BenchmarkSpec, record: &SampleRecord) -> Result<RgbImage, BenchError> {
    match record.label {
        Label::Real => Ok(synth_real(record.sample_seed, spec.image_size)),
        Label::Fake => {
            let g = spec.generator(&record.generator_id).ok_or_else(|| {
                BenchError::UnknownGenerator {
                    sample_id: record.sample_id.clone(),
                    generator_id: record.generator_id.clone(),
                }
            })?;
            Ok(synth_fake(record.sample_seed, g, universal_seed(spec), spec.image_size))
        }
    }
}

pub fn synth_real(sample_seed: u64, size: u32) -> RgbImage {
    quantize_planes(&real_canvas(sample_seed, size), size)
}

/// Same scene as `synth_real(sample_seed)` plus the planted fingerprints.
/// Both amplitudes at zero reproduce the real image byte for byte.
pub fn synth_fake(
    sample_seed: u64,
    generator: &GeneratorSpec,
    universal_seed: u64,
    size: u32,
) -> RgbImage {
    let mut planes = real_canvas(sample_seed, size);
    let universal = universal_pattern(universal_seed, size);
    let specific = specific_pattern(generator, size);
    for plane in planes.iter_mut() {
        for (i, v) in plane.iter_mut().enumerate() {
            *v += generator.universal_amplitude * universal[i]
                + generator.specific_amplitude * specific[i];
        }
    }
    quantize_planes(&planes, size)
}

fn quantize_planes(planes: &[Vec<f32>; 3], size: u32) -> RgbImage {
    let n = (size * size) as usize;
    let mut out = vec![0u8; n * 3];
    for i in 0..n {
        out[i * 3] = quantize_u8(planes[0][i]);
        out[i * 3 + 1] = quantize_u8(planes[1][i]);
        out[i * 3 + 2] = quantize_u8(planes[2][i]);
    }
    RgbImage::from_raw(size, size, out).expect("sized above")
}

/// Pre-quantization scene in f32 planes (R, G, B).
///
/// Draw order is fixed: base field phases, global scene parameters, shapes,
/// sensor noise. Changing it would silently re-key every sample.
pub(crate) fn real_canvas(sample_seed: u64, size: u32) -> [Vec<f32>; 3] {
    let n = (size * size) as usize;
    let mut rng = derive_rng(sample_seed, "scene", &[]);
    let field = noise_field(&mut rng, size);

    let contrast: f32 = rng.gen_range(25.0..55.0);
    let mut planes: [Vec<f32>; 3] = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for plane in planes.iter_mut() {
        let mean: f32 = rng.gen_range(100.0..156.0);
        let gain: f32 = rng.gen_range(0.85..1.15);
        for (dst, &f) in plane.iter_mut().zip(&field) {
            *dst = mean + contrast * gain * f;
        }
    }

    let shape_count = rng.gen_range(3..=8);
    for _ in 0..shape_count {
        paint_shape(&mut planes, size, &mut rng);
    }

    let sensor = Normal::new(0.0f32, SENSOR_SIGMA).expect("positive sigma");
    for plane in planes.iter_mut() {
        for v in plane.iter_mut() {
            *v += sensor.sample(&mut rng);
        }
    }
    planes
}

/// Zero-mean, unit-RMS field whose power spectrum falls off as 1/f.
#[cfg(test)]
pub(crate) fn noise_base(seed: u64, size: u32) -> Vec<f32> {
    noise_field(&mut derive_rng(seed, "scene", &[]), size)
}

fn noise_field(rng: &mut rand_chacha::ChaCha8Rng, size: u32) -> Vec<f32> {
    let n = size as usize;
    let normal = Normal::new(0.0f32, 1.0).expect("unit sigma");
    let mut grid = vec![Complex32::new(0.0, 0.0); n * n];
    for ky in 0..n {
        let fy = ky.min(n - ky) as f32 / n as f32;
        for kx in 0..n {
            let fx = kx.min(n - kx) as f32 / n as f32;
            let f = (fx * fx + fy * fy).sqrt();
            // amplitude ~ f^-1/2 so power ~ 1/f; DC stays zero
            let amp = if f > 0.0 { f.powf(-0.5) } else { 0.0 };
            grid[ky * n + kx] =
                Complex32::new(normal.sample(rng) * amp, normal.sample(rng) * amp);
        }
    }
    ifft2(&mut grid, n);
    let mut field: Vec<f32> = grid.iter().map(|c| c.re).collect();
    let mean = field.iter().sum::<f32>() / field.len() as f32;
    let mut rms = 0.0f64;
    for v in field.iter_mut() {
        *v -= mean;
        rms += (*v as f64) * (*v as f64);
    }
    let rms = (rms / field.len() as f64).sqrt() as f32;
    if rms > 0.0 {
        for v in field.iter_mut() {
            *v /= rms;
        }
    }
    field
}

type FftCache = Mutex<HashMap<(usize, bool), Arc<dyn Fft<f32>>>>;

fn fft_for(n: usize, inverse: bool) -> Arc<dyn Fft<f32>> {
    static CACHE: OnceLock<FftCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("fft cache poisoned");
    map.entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

fn ifft2(grid: &mut [Complex32], n: usize) {
    let fft = fft_for(n, true);
    for row in grid.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex32::new(0.0, 0.0); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = grid[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            grid[y * n + x] = col[y];
        }
    }
}

#[cfg(test)]
pub(crate) fn fft2_forward(grid: &mut [Complex32], n: usize) {
    let fft = fft_for(n, false);
    for row in grid.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex32::new(0.0, 0.0); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = grid[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            grid[y * n + x] = col[y];
        }
    }
}

fn smoothstep(t: f32) -> f32 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn paint_shape(planes: &mut [Vec<f32>; 3], size: u32, rng: &mut rand_chacha::ChaCha8Rng) {
    let s = size as f32;
    let is_ellipse = rng.gen::<f64>() < 0.5;
    let cx: f32 = rng.gen_range(0.0..s);
    let cy: f32 = rng.gen_range(0.0..s);
    let a: f32 = rng.gen_range(0.10 * s..0.30 * s);
    let b: f32 = rng.gen_range(0.10 * s..0.30 * s);
    let theta: f32 = rng.gen_range(0.0..std::f32::consts::PI);
    let color = [
        rng.gen_range(30.0f32..225.0),
        rng.gen_range(30.0f32..225.0),
        rng.gen_range(30.0f32..225.0),
    ];
    let edge: f32 = rng.gen_range(1.5..4.0);
    let alpha_peak: f32 = rng.gen_range(0.55..0.95);
    let shade: f32 = rng.gen_range(0.2..0.6);

    let (sin_t, cos_t) = theta.sin_cos();
    let reach = a.max(b) + edge + 1.0;
    let x0 = ((cx - reach).floor().max(0.0)) as u32;
    let x1 = ((cx + reach).ceil().min(s - 1.0)) as u32;
    let y0 = ((cy - reach).floor().max(0.0)) as u32;
    let y1 = ((cy + reach).ceil().min(s - 1.0)) as u32;
    let edge_norm = edge / a.min(b);

    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f32 - cx;
            let dy = y as f32 - cy;
            let (u, v) = if is_ellipse {
                ((dx * cos_t + dy * sin_t) / a, (-dx * sin_t + dy * cos_t) / b)
            } else {
                (dx / a, dy / b)
            };
            let rho = if is_ellipse { (u * u + v * v).sqrt() } else { u.abs().max(v.abs()) };
            if rho >= 1.0 {
                continue;
            }
            let cover = smoothstep((1.0 - rho) / edge_norm);
            if cover <= 0.0 {
                continue;
            }
            let alpha = alpha_peak * cover;
            let shading = 1.0 - shade * rho * rho;
            let idx = (y * size + x) as usize;
            for c in 0..3 {
                let p = &mut planes[c][idx];
                *p = *p * (1.0 - alpha) + color[c] * shading * alpha;
            }
        }
    }
}

/// One plane shared by all three channels; cached per (seed, size).
pub(crate) fn universal_pattern(universal_seed: u64, size: u32) -> Arc<Vec<f32>> {
    pattern_cache(PatternKey { tag: 0, seed: universal_seed, size }, || {
        let mut rng = derive_rng(universal_seed, "universal_waves", &[]);
        let plane = wave_comb(&mut rng, LOW_BAND, 4, None, size);
        normalize_rms(plane, None)
    })
}

/// Generator-specific comb in the family band, windowed by the support mask.
pub(crate) fn specific_pattern(generator: &GeneratorSpec, size: u32) -> Arc<Vec<f32>> {
    let tag = match generator.family {
        Family::GanLike => 1,
        Family::DiffusionLike => 2,
    };
    pattern_cache(PatternKey { tag, seed: generator.specific_fingerprint_seed, size }, || {
        let mut rng = derive_rng(generator.specific_fingerprint_seed, "specific_waves", &[]);
        let plane = match generator.family {
            Family::GanLike => wave_comb(&mut rng, HIGH_BAND, 2, Some(CHECKERBOARD), size),
            Family::DiffusionLike => wave_comb(&mut rng, MID_BAND, 3, None, size),
        };
        let mask = support_mask(generator.specific_fingerprint_seed, size);
        let masked: Vec<f32> = plane.iter().zip(&mask).map(|(p, m)| p * m).collect();
        normalize_rms(masked, Some(&mask))
    })
}

#[derive(PartialEq, Eq, Hash, Clone, Copy)]
struct PatternKey {
    tag: u8,
    seed: u64,
    size: u32,
}

fn pattern_cache(key: PatternKey, make: impl FnOnce() -> Vec<f32>) -> Arc<Vec<f32>> {
    static CACHE: OnceLock<Mutex<HashMap<PatternKey, Arc<Vec<f32>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("pattern cache poisoned");
    map.entry(key).or_insert_with(|| Arc::new(make())).clone()
}

/// Sum of cosine waves drawn without replacement from a lattice band. Every
/// wave has an integer wave vector over WAVE_PERIOD, so the comb tiles in
/// 14x14 blocks.
fn wave_comb(
    rng: &mut rand_chacha::ChaCha8Rng,
    band: &[(i32, i32)],
    draws: usize,
    mandatory: Option<(i32, i32)>,
    size: u32,
) -> Vec<f32> {
    let mut pool: Vec<(i32, i32)> = band.to_vec();
    let mut waves: Vec<(i32, i32, f32, f32)> = Vec::new();
    if let Some(m) = mandatory {
        waves.push((m.0, m.1, rng.gen_range(0.0..std::f32::consts::TAU), rng.gen_range(0.8..1.2)));
    }
    for _ in 0..draws.min(pool.len()) {
        let pick = rng.gen_range(0..pool.len());
        let (nx, ny) = pool.swap_remove(pick);
        waves.push((nx, ny, rng.gen_range(0.0..std::f32::consts::TAU), rng.gen_range(0.6..1.0)));
    }
    let n = size as usize;
    let mut plane = vec![0.0f32; n * n];
    for &(nx, ny, phase, amp) in &waves {
        let kx = std::f32::consts::TAU * nx as f32 / WAVE_PERIOD;
        let ky = std::f32::consts::TAU * ny as f32 / WAVE_PERIOD;
        for y in 0..n {
            let part = ky * y as f32 + phase;
            let row = y * n;
            for x in 0..n {
                plane[row + x] += amp * (kx * x as f32 + part).cos();
            }
        }
    }
    plane
}

/// Scales a plane to unit RMS; with a mask, RMS is taken over the mask mass
/// so the pattern has unit strength inside its support.
fn normalize_rms(mut plane: Vec<f32>, mask: Option<&[f32]>) -> Vec<f32> {
    let (mut num, mut den) = (0.0f64, 0.0f64);
    match mask {
        None => {
            for &v in &plane {
                num += (v as f64) * (v as f64);
            }
            den = plane.len() as f64;
        }
        Some(m) => {
            for (&v, &w) in plane.iter().zip(m) {
                num += (v as f64) * (v as f64);
                den += (w as f64) * (w as f64);
            }
        }
    }
    if num > 0.0 && den > 0.0 {
        let scale = (den / num).sqrt() as f32;
        for v in &mut plane {
            *v *= scale;
        }
    }
    plane
}

/// Axis-aligned support rectangle (x0, y0, width, height) for a generator's
/// specific fingerprint, derived from its seed.
pub fn specific_support_rect(generator: &GeneratorSpec, size: u32) -> (u32, u32, u32, u32) {
    support_rect_from_seed(generator.specific_fingerprint_seed, size)
}

fn support_rect_from_seed(seed: u64, size: u32) -> (u32, u32, u32, u32) {
    let mut rng = derive_rng(seed, "support", &[]);
    let s = size as f32;
    let w = (rng.gen_range(SUPPORT_FRACTION.0..SUPPORT_FRACTION.1) * s).round() as u32;
    let h = (rng.gen_range(SUPPORT_FRACTION.0..SUPPORT_FRACTION.1) * s).round() as u32;
    let w = w.min(size);
    let h = h.min(size);
    let x0 = rng.gen_range(0..=size - w);
    let y0 = rng.gen_range(0..=size - h);
    (x0, y0, w, h)
}

/// Soft window: 1 inside the rectangle, smoothstep falloff over SUPPORT_EDGE
/// pixels, 0 elsewhere.
fn support_mask(seed: u64, size: u32) -> Vec<f32> {
    let (x0, y0, w, h) = support_rect_from_seed(seed, size);
    let (x1, y1) = (x0 + w, y0 + h);
    let n = size as usize;
    let mut mask = vec![0.0f32; n * n];
    for y in 0..n {
        let fy = edge_profile(y as f32, y0 as f32, y1 as f32);
        if fy <= 0.0 {
            continue;
        }
        for x in 0..n {
            let fx = edge_profile(x as f32, x0 as f32, x1 as f32);
            if fx > 0.0 {
                mask[y * n + x] = fx * fy;
            }
        }
    }
    mask
}

fn edge_profile(p: f32, lo: f32, hi: f32) -> f32 {
    if p < lo || p > hi {
        return 0.0;
    }
    let d = (p - lo).min(hi - p);
    smoothstep(d / SUPPORT_EDGE)
}
