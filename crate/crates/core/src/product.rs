//! Pixel-scaled product of a face crop and its saliency map: every pixel is
//! attenuated by the saliency at that position, so non-salient regions fade
//! towards black.

use crate::error::{Error, Result};
use crate::image::{round_u8, GrayImage};
use crate::saliency::SaliencyMap;

/// `out[i] = round_half_up(face[i] · saliency[i])`.
pub fn scaled_product(face: &GrayImage, saliency: &SaliencyMap) -> Result<GrayImage> {
    if face.width() != saliency.width() || face.height() != saliency.height() {
        return Err(Error::ShapeMismatch {
            expected: format!("face {}x{}", face.width(), face.height()),
            actual: format!("saliency {}x{}", saliency.width(), saliency.height()),
        });
    }
    let pixels = face
        .pixels()
        .iter()
        .zip(saliency.values())
        .map(|(&p, &s)| round_u8(p as f64 * s))
        .collect();
    GrayImage::new(face.width(), face.height(), pixels)
}

/// Optional post-step: stretch the product back to the full `[0, 255]` range.
/// Constant images are returned unchanged.
pub fn renormalize(image: &GrayImage) -> GrayImage {
    let (lo, hi) = image.min_max();
    if lo == hi {
        return image.clone();
    }
    let scale = 255.0 / (hi - lo) as f64;
    let mut out = image.clone();
    for p in out.pixels_mut() {
        *p = round_u8((*p - lo) as f64 * scale);
    }
    out
}
