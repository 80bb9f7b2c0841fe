//! Visual saliency maps: the deterministic spectral-residual backend and
//! adapters for maps produced by an external (deep) model.

mod external;
mod spectral;

use std::path::Path;

pub use external::{
    parse_backend, read_raw_map, CommandBackend, PrecomputedBackend, SaliencyBackend, SpectralBackend,
};
pub use spectral::{spectral_residual_saliency, AVERAGE_KERNEL, BLUR_SIGMA, WORKING_SIZE};

use crate::error::{Error, Result};
use crate::image::{round_u8, GrayImage, RealGrid};

/// Per-pixel saliency in `[0, 1]`; the maximum is exactly 1 unless the whole
/// map is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn zeros(width: usize, height: usize) -> SaliencyMap {
        SaliencyMap {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    /// Builds a map from values already in `[0, 1]` (e.g. a binary mask).
    /// No renormalisation is applied.
    pub fn from_unit_values(width: usize, height: usize, values: Vec<f64>) -> Result<SaliencyMap> {
        if values.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", width * height),
                actual: format!("{}", values.len()),
            });
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("saliency value {v} outside [0, 1]")));
        }
        Ok(SaliencyMap {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Position of the first maximum, row-major.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }

    pub fn to_grid(&self) -> RealGrid {
        RealGrid {
            width: self.width,
            height: self.height,
            values: self.values.clone(),
        }
    }

    /// 8-bit rendering, `round(255·v)`.
    pub fn to_gray(&self) -> GrayImage {
        let pixels = self.values.iter().map(|v| round_u8(v * 255.0)).collect();
        GrayImage::new(self.width, self.height, pixels).expect("dimensions are consistent")
    }

    pub fn from_gray(image: &GrayImage) -> SaliencyMap {
        SaliencyMap {
            width: image.width(),
            height: image.height(),
            values: image.pixels().iter().map(|&p| p as f64 / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray().save_png(path)
    }

    pub fn load_png(path: &Path) -> Result<SaliencyMap> {
        Ok(SaliencyMap::from_gray(&GrayImage::load(path)?))
    }
}

/// Min-max rescale to `[0, 1]`; a constant grid maps to all zeros.
pub fn normalize_map(raw: &RealGrid) -> Result<SaliencyMap> {
    if let Some(v) = raw.values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("saliency grid contains {v}")));
    }
    let min = raw.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let values = if range > 0.0 && range > max.abs() * 1e-12 {
        raw.values.iter().map(|v| ((v - min) / range).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; raw.values.len()]
    };
    Ok(SaliencyMap {
        width: raw.width,
        height: raw.height,
        values,
    })
}
