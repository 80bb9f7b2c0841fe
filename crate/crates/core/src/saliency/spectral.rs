//! Spectral-residual saliency: the log-amplitude spectrum minus its local
//! average marks the "unexpected" frequencies; transforming that residual
//! back with the original phase highlights the regions that produce it.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{normalize_map, SaliencyMap};
use crate::error::{Error, Result};
use crate::image::{GrayImage, RealGrid};

/// Side of the square working resolution.
pub const WORKING_SIZE: usize = 64;
/// Side of the box filter applied to the log-amplitude spectrum.
pub const AVERAGE_KERNEL: usize = 3;
/// Standard deviation (working-resolution pixels) of the final blur.
pub const BLUR_SIGMA: f64 = 2.5;
/// Amplitudes below this fraction of the peak are clamped before the log.
pub const AMPLITUDE_FLOOR: f64 = 1e-4;
/// Smallest accepted input side.
pub const MIN_SIDE: usize = 16;

pub fn spectral_residual_saliency(image: &GrayImage) -> Result<SaliencyMap> {
    let (w, h) = (image.width(), image.height());
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(Error::InvalidInput(format!(
            "spectral saliency needs at least {MIN_SIDE}x{MIN_SIDE}, got {w}x{h}"
        )));
    }
    let (lo, hi) = image.min_max();
    if lo == hi {
        return Ok(SaliencyMap::zeros(w, h));
    }

    let n = WORKING_SIZE;
    let src = RealGrid::new(w, h, image.pixels().iter().map(|&p| p as f64 / 255.0).collect())?;
    let small = src.resize_bilinear(n, n);

    let mut planner = FftPlanner::<f64>::new();
    let mut spectrum: Vec<Complex<f64>> = small.values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2(&mut planner, &mut spectrum, n, false);

    let peak = spectrum.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let floor = (peak * AMPLITUDE_FLOOR).max(f64::MIN_POSITIVE);
    let log_amp: Vec<f64> = spectrum.iter().map(|c| c.norm().max(floor).ln()).collect();
    let avg = box_filter_periodic(&log_amp, n, AVERAGE_KERNEL);
    for (i, c) in spectrum.iter_mut().enumerate() {
        let norm = c.norm();
        let phase = if norm > 0.0 { *c / norm } else { Complex::new(1.0, 0.0) };
        *c = phase * (log_amp[i] - avg[i]).exp();
    }
    fft2(&mut planner, &mut spectrum, n, true);
    let energy: Vec<f64> = spectrum.iter().map(|c| c.norm_sqr()).collect();
    let blurred = gaussian_blur(&energy, n, n, BLUR_SIGMA);

    let map = RealGrid::new(n, n, blurred)?.resize_bilinear(w, h);
    normalize_map(&map)
}

fn fft2(planner: &mut FftPlanner<f64>, data: &mut [Complex<f64>], n: usize, inverse: bool) {
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    for row in data.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); n];
    for x in 0..n {
        for y in 0..n {
            column[y] = data[y * n + x];
        }
        fft.process(&mut column);
        for y in 0..n {
            data[y * n + x] = column[y];
        }
    }
}

/// k×k mean with wrap-around borders (the spectrum is periodic).
fn box_filter_periodic(values: &[f64], n: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let wrap = |i: isize| i.rem_euclid(n as isize) as usize;
    let mut out = vec![0.0; n * n];
    for y in 0..n as isize {
        for x in 0..n as isize {
            let mut s = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    s += values[wrap(y + dy) * n + wrap(x + dx)];
                }
            }
            out[y as usize * n + x as usize] = s / (k * k) as f64;
        }
    }
    out
}

/// Separable Gaussian with a ⌈3σ⌉ radius and clamped borders.
pub(crate) fn gaussian_blur(values: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / total).collect();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * values[y * w + clamp(x as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[clamp(y as isize + k as isize - radius, h) * w + x])
                .sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_image_gives_zero_map() {
        let map = spectral_residual_saliency(&GrayImage::filled(40, 30, 117)).unwrap();
        assert_eq!((map.width(), map.height()), (40, 30));
        assert!(map.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bright_square_is_most_salient() {
        for (size, sx, sy) in [(64, 10, 40), (128, 90, 20), (256, 120, 136)] {
            let img = GrayImage::from_fn(size, size, |x, y| {
                if (sx..sx + 8).contains(&x) && (sy..sy + 8).contains(&y) {
                    230
                } else {
                    20
                }
            });
            let map = spectral_residual_saliency(&img).unwrap();
            let (ax, ay) = map.argmax();
            assert!(
                (sx..sx + 8).contains(&ax) && (sy..sy + 8).contains(&ay),
                "size {size}: argmax ({ax},{ay}) outside square at ({sx},{sy})"
            );
        }
    }

    #[test]
    fn too_small_is_rejected() {
        assert!(spectral_residual_saliency(&GrayImage::filled(15, 40, 3)).is_err());
    }

    #[test]
    fn blur_preserves_constant() {
        let out = gaussian_blur(&[2.0; 25], 5, 5, 2.5);
        assert!(out.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }
}
