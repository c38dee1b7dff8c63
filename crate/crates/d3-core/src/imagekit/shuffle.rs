//! Patch shuffling: the structural disruption at the heart of the detector.

use super::{ImageOpError, RgbImage};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

/// Splits the image into a patch grid and rearranges the patches by one
/// uniform random permutation. Patch contents are copied verbatim, so the
/// multiset of patches is invariant. Dimensions must divide evenly; anything
/// else is a hard error rather than a silent pad or crop.
pub fn patch_shuffle(
    img: &RgbImage,
    patch_size: u32,
    rng: &mut ChaCha8Rng,
) -> Result<RgbImage, ImageOpError> {
    if patch_size == 0 {
        return Err(ImageOpError::ZeroPatch);
    }
    let (w, h) = img.dimensions();
    if w % patch_size != 0 || h % patch_size != 0 {
        return Err(ImageOpError::NonDivisiblePatch { width: w, height: h, patch_size });
    }
    let cols = (w / patch_size) as usize;
    let rows = (h / patch_size) as usize;
    let mut order: Vec<usize> = (0..rows * cols).collect();
    order.shuffle(rng);

    let ps = patch_size as usize;
    let stride = w as usize * 3;
    let src = img.as_raw();
    let mut out = vec![0u8; src.len()];
    for (dst_idx, &src_idx) in order.iter().enumerate() {
        let (dr, dc) = (dst_idx / cols, dst_idx % cols);
        let (sr, sc) = (src_idx / cols, src_idx % cols);
        for py in 0..ps {
            let s = (sr * ps + py) * stride + sc * ps * 3;
            let d = (dr * ps + py) * stride + dc * ps * 3;
            out[d..d + ps * 3].copy_from_slice(&src[s..s + ps * 3]);
        }
    }
    Ok(RgbImage::from_raw(w, h, out).expect("sized above"))
}
