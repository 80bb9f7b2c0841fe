//! Pixel grids and the handful of raster operations the pipeline needs:
//! BT.601 luma conversion, bilinear resampling and PNG/JPEG I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit single-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: format!("{} pixels for {width}x{height}", width * height),
                actual: format!("{} pixels", pixels.len()),
            });
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn min_max(&self) -> (u8, u8) {
        let min = *self.pixels.iter().min().expect("non-empty");
        let max = *self.pixels.iter().max().expect("non-empty");
        (min, max)
    }

    /// Copies the sub-rectangle `[x, x+w) × [y, y+h)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<GrayImage> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(Error::InvalidInput(format!(
                "crop ({x},{y},{w},{h}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for row in y..y + h {
            let start = row * self.width + x;
            pixels.extend_from_slice(&self.pixels[start..start + w]);
        }
        Ok(GrayImage {
            width: w,
            height: h,
            pixels,
        })
    }

    /// Bilinear resample with pixel-centre alignment; the result is rounded
    /// half-up back to 8 bits.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> GrayImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let src: Vec<f64> = self.pixels.iter().map(|&p| p as f64).collect();
        let out = bilinear(&src, self.width, self.height, width, height);
        let pixels = out.into_iter().map(round_u8).collect();
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    pub fn load(path: &Path) -> Result<GrayImage> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        Ok(from_dynamic(&img))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::image(path, e))
    }
}

/// Real-valued single-channel grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealGrid {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl RealGrid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height || width == 0 || height == 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values for {width}x{height}", width * height),
                actual: format!("{} values", values.len()),
            });
        }
        Ok(RealGrid {
            width,
            height,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidInput("ragged rows".into()));
        }
        RealGrid::new(width, height, rows.concat())
    }

    pub fn resize_bilinear(&self, width: usize, height: usize) -> RealGrid {
        if width == self.width && height == self.height {
            return self.clone();
        }
        RealGrid {
            width,
            height,
            values: bilinear(&self.values, self.width, self.height, width, height),
        }
    }
}

/// Round half-up and clamp to `[0, 255]`.
#[inline]
pub fn round_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// ITU-R BT.601 luma, rounded half-up in exact integer arithmetic.
#[inline]
pub fn luma_bt601(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

pub fn rgb_to_gray(img: &image::RgbImage) -> GrayImage {
    let pixels = img.pixels().map(|p| luma_bt601(p[0], p[1], p[2])).collect();
    GrayImage {
        width: img.width() as usize,
        height: img.height() as usize,
        pixels,
    }
}

pub fn from_dynamic(img: &image::DynamicImage) -> GrayImage {
    match img {
        image::DynamicImage::ImageLuma8(g) => GrayImage {
            width: g.width() as usize,
            height: g.height() as usize,
            pixels: g.as_raw().clone(),
        },
        image::DynamicImage::ImageLuma16(_) | image::DynamicImage::ImageLumaA16(_) => {
            let g = img.to_luma8();
            GrayImage {
                width: g.width() as usize,
                height: g.height() as usize,
                pixels: g.into_raw(),
            }
        }
        other => rgb_to_gray(&other.to_rgb8()),
    }
}

fn bilinear(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    let sx_scale = sw as f64 / dw as f64;
    let sy_scale = sh as f64 / dh as f64;
    let taps = |d: usize, scale: f64, n: usize| -> (usize, usize, f64) {
        let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let xs: Vec<_> = (0..dw).map(|x| taps(x, sx_scale, sw)).collect();
    let mut out = Vec::with_capacity(dw * dh);
    for y in 0..dh {
        let (y0, y1, fy) = taps(y, sy_scale, sh);
        let r0 = &src[y0 * sw..(y0 + 1) * sw];
        let r1 = &src[y1 * sw..(y1 + 1) * sw];
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
            out.push(top + (bottom - top) * fy);
        }
    }
    out
}
