//! Face localisation and the crop → 256×256 → grayscale normalisation.

mod cascade;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub use cascade::{group_rectangles, HaarCascade, ScanParams};

use crate::error::{Error, Result};
use crate::image::{rgb_to_gray, GrayImage};

/// Side length of every preprocessed face.
pub const FACE_SIZE: usize = 256;

/// Boxes narrower or shorter than this are rejected as degenerate.
pub const MIN_BOX_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub score: f64,
}

impl FaceBox {
    pub fn full_frame(image: &GrayImage) -> FaceBox {
        FaceBox {
            x: 0,
            y: 0,
            w: image.width(),
            h: image.height(),
            score: 0.0,
        }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn iou(&self, other: &FaceBox) -> f64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        if x1 <= x0 || y1 <= y0 {
            return 0.0;
        }
        let inter = ((x1 - x0) * (y1 - y0)) as f64;
        inter / ((self.area() + other.area()) as f64 - inter)
    }

    fn fits(&self, image: &GrayImage) -> bool {
        self.w > 0 && self.h > 0 && self.x + self.w <= image.width() && self.y + self.h <= image.height()
    }
}

/// Anything that proposes face rectangles for a grayscale image.
pub trait FaceDetector: Send + Sync {
    fn detect(&self, image: &GrayImage) -> Vec<FaceBox>;
}

/// What to do with an image in which no face is found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoFacePolicy {
    #[default]
    Skip,
    FullFrame,
}

impl FromStr for NoFacePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skip" => Ok(NoFacePolicy::Skip),
            "full-frame" => Ok(NoFacePolicy::FullFrame),
            other => Err(Error::InvalidInput(format!(
                "unknown no-face policy `{other}` (expected skip or full-frame)"
            ))),
        }
    }
}

/// Returns the single largest detection (ties: higher score, then top-left
/// first). `source` only labels the error.
pub fn detect_face(image: &GrayImage, detector: &dyn FaceDetector, source: &Path) -> Result<FaceBox> {
    let mut boxes = detector.detect(image);
    boxes.retain(|b| b.fits(image));
    boxes
        .into_iter()
        .max_by(|a, b| {
            a.area()
                .cmp(&b.area())
                .then(a.score.partial_cmp(&b.score).unwrap_or(std::cmp::Ordering::Equal))
                .then((b.y, b.x).cmp(&(a.y, a.x)))
        })
        .ok_or_else(|| Error::NoFaceFound(source.to_path_buf()))
}

/// Crops `face` out of `image` and resamples it bilinearly to 256×256.
pub fn crop_resize_gray(image: &GrayImage, face: &FaceBox) -> Result<GrayImage> {
    if face.w < MIN_BOX_SIDE || face.h < MIN_BOX_SIDE {
        return Err(Error::InvalidInput(format!(
            "face box {}x{} is smaller than {MIN_BOX_SIDE} px",
            face.w, face.h
        )));
    }
    let crop = image.crop(face.x, face.y, face.w, face.h)?;
    Ok(crop.resize_bilinear(FACE_SIZE, FACE_SIZE))
}

/// Colour variant: BT.601 luma first, then crop and resize.
pub fn crop_resize_rgb(image: &::image::RgbImage, face: &FaceBox) -> Result<GrayImage> {
    crop_resize_gray(&rgb_to_gray(image), face)
}

/// Detector backends by id.
pub struct DetectorRegistry {
    backends: BTreeMap<String, Box<dyn FaceDetector>>,
}

/// Default backend id: a Viola-Jones cascade loaded from a file.
pub const VIOLA_JONES: &str = "viola-jones";
/// Backend id of the bundled cascade for synthetic fixtures.
pub const SYNTHETIC: &str = "synthetic";

const CASCADE_LOCATIONS: [&str; 3] = [
    "/usr/share/opencv4/haarcascades/haarcascade_frontalface_default.xml",
    "/usr/share/opencv/haarcascades/haarcascade_frontalface_default.xml",
    "/usr/local/share/opencv4/haarcascades/haarcascade_frontalface_default.xml",
];

impl DetectorRegistry {
    pub fn empty() -> Self {
        DetectorRegistry {
            backends: BTreeMap::new(),
        }
    }

    /// Registers `synthetic` and, when a cascade file is given or found in a
    /// standard OpenCV install location, `viola-jones`.
    pub fn standard(cascade: Option<&Path>) -> Result<Self> {
        let mut reg = DetectorRegistry::empty();
        reg.register(SYNTHETIC, Box::new(HaarCascade::synthetic_frontal()));
        let path: Option<PathBuf> = match cascade {
            Some(p) => Some(p.to_path_buf()),
            None => CASCADE_LOCATIONS.iter().map(PathBuf::from).find(|p| p.exists()),
        };
        if let Some(p) = path {
            reg.register(VIOLA_JONES, Box::new(HaarCascade::from_file(&p)?));
        }
        Ok(reg)
    }

    pub fn register(&mut self, id: &str, backend: Box<dyn FaceDetector>) {
        self.backends.insert(id.to_string(), backend);
    }

    pub fn known(&self) -> Vec<String> {
        self.backends.keys().cloned().collect()
    }

    pub fn get(&self, id: &str) -> Result<&dyn FaceDetector> {
        if let Some(b) = self.backends.get(id) {
            return Ok(b.as_ref());
        }
        if id == VIOLA_JONES {
            return Err(Error::Backend {
                backend: id.into(),
                message: "no cascade file; pass --cascade <haarcascade_frontalface_default.xml> \
                          (shipped with OpenCV)"
                    .into(),
            });
        }
        Err(Error::UnknownBackend {
            kind: "face detector",
            id: id.into(),
            known: self.known(),
        })
    }
}
