//! Saliency maps: canvas-sized single-channel rasters in [0, 1].
//!
//! The built-in provider is spectral-residual saliency: the log-amplitude
//! spectrum of a 64x64 grayscale thumbnail minus its local mean, brought
//! back with the original phase, squared, smoothed and normalized.

use std::path::Path;

use image::{imageops, ImageBuffer, Luma, RgbaImage};
use rustfft::num_complex::Complex32;
use rustfft::FftPlanner;
use thiserror::Error;

const WORK_SIZE: u32 = 64;
const SMOOTH_SIGMA: f32 = 2.5;
/// Thumbnails whose luma range is below this are treated as flat.
const FLAT_RANGE: f32 = 1e-6;

#[derive(Debug, Error)]
pub enum SaliencyError {
    #[error("saliency map is {got:?}, canvas is {want:?}")]
    SizeMismatch { got: (u32, u32), want: (u32, u32) },
    #[error("cannot read saliency map {path}: {reason}")]
    Load { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl SaliencyMap {
    /// Values are clamped into [0, 1].
    pub fn new(width: u32, height: u32, mut values: Vec<f32>) -> Self {
        assert_eq!(values.len(), width as usize * height as usize, "value count must match size");
        for v in &mut values {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self { width, height, values }
    }

    pub fn uniform(width: u32, height: u32, value: f32) -> Self {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Single-channel 8-bit PNG, 0..255 mapped to [0, 1]. Color files are
    /// converted to luma.
    pub fn load_png(path: &Path) -> Result<Self, SaliencyError> {
        let img = image::open(path).map_err(|e| SaliencyError::Load {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let gray = img.to_luma8();
        let values = gray.pixels().map(|p| p.0[0] as f32 / 255.0).collect();
        Ok(Self::new(gray.width(), gray.height(), values))
    }

    pub fn to_gray8(&self) -> ImageBuffer<Luma<u8>, Vec<u8>> {
        ImageBuffer::from_fn(self.width, self.height, |x, y| {
            Luma([(self.get(x, y) * 255.0).round() as u8])
        })
    }

    pub fn check_size(&self, width: u32, height: u32) -> Result<(), SaliencyError> {
        if (self.width, self.height) == (width, height) {
            Ok(())
        } else {
            Err(SaliencyError::SizeMismatch {
                got: (self.width, self.height),
                want: (width, height),
            })
        }
    }
}

fn luma(p: &image::Rgba<u8>) -> f32 {
    (0.299 * p.0[0] as f32 + 0.587 * p.0[1] as f32 + 0.114 * p.0[2] as f32) / 255.0
}

/// 2-D FFT in place over a row-major `n x n` buffer.
fn fft2(buf: &mut [Complex32], n: usize, inverse: bool) {
    let mut planner = FftPlanner::<f32>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    for row in buf.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex32::default(); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = buf[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            buf[y * n + x] = col[y];
        }
    }
}

fn clamp_at(v: &[f32], n: usize, x: isize, y: isize) -> f32 {
    let cx = x.clamp(0, n as isize - 1) as usize;
    let cy = y.clamp(0, n as isize - 1) as usize;
    v[cy * n + cx]
}

fn box3(v: &[f32], n: usize) -> Vec<f32> {
    let mut out = vec![0.0; v.len()];
    for y in 0..n as isize {
        for x in 0..n as isize {
            let mut s = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    s += clamp_at(v, n, x + dx, y + dy);
                }
            }
            out[y as usize * n + x as usize] = s / 9.0;
        }
    }
    out
}

fn gaussian_blur(v: &[f32], n: usize, sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f32 = kernel.iter().sum();
    let pass = |src: &[f32], horizontal: bool| -> Vec<f32> {
        let mut out = vec![0.0; src.len()];
        for y in 0..n as isize {
            for x in 0..n as isize {
                let mut s = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let d = k as isize - radius;
                    s += w * if horizontal {
                        clamp_at(src, n, x + d, y)
                    } else {
                        clamp_at(src, n, x, y + d)
                    };
                }
                out[y as usize * n + x as usize] = s / norm;
            }
        }
        out
    };
    pass(&pass(v, true), false)
}

/// Spectral-residual saliency of `raster`, resized back to its size.
pub fn compute_saliency(raster: &RgbaImage) -> SaliencyMap {
    let (w, h) = raster.dimensions();
    if w == 0 || h == 0 {
        return SaliencyMap::new(w, h, Vec::new());
    }
    let n = WORK_SIZE as usize;
    let gray: ImageBuffer<Luma<f32>, Vec<f32>> =
        ImageBuffer::from_fn(w, h, |x, y| Luma([luma(raster.get_pixel(x, y))]));
    let small = imageops::resize(&gray, WORK_SIZE, WORK_SIZE, imageops::FilterType::Triangle);
    let (lo, hi) = small
        .pixels()
        .fold((f32::MAX, f32::MIN), |(lo, hi), p| (lo.min(p.0[0]), hi.max(p.0[0])));
    if hi - lo < FLAT_RANGE {
        return SaliencyMap::uniform(w, h, 0.0);
    }

    let mut spectrum: Vec<Complex32> = small.pixels().map(|p| Complex32::new(p.0[0], 0.0)).collect();
    fft2(&mut spectrum, n, false);
    let log_amp: Vec<f32> = spectrum.iter().map(|c| (c.norm() + 1e-9).ln()).collect();
    let mean = box3(&log_amp, n);
    for (i, c) in spectrum.iter_mut().enumerate() {
        let residual = log_amp[i] - mean[i];
        *c = Complex32::from_polar(residual.exp(), c.arg());
    }
    fft2(&mut spectrum, n, true);
    let energy: Vec<f32> = spectrum.iter().map(|c| c.norm_sqr()).collect();
    let smooth = gaussian_blur(&energy, n, SMOOTH_SIGMA);
    let (lo, hi) = smooth
        .iter()
        .fold((f32::MAX, f32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi - lo).is_normal() {
        return SaliencyMap::uniform(w, h, 0.0);
    }
    // Normalize before resizing: float resampling clamps to [0, 1].
    let unit: Vec<f32> = smooth.iter().map(|v| (v - lo) / (hi - lo)).collect();
    let small_map: ImageBuffer<Luma<f32>, Vec<f32>> =
        ImageBuffer::from_raw(WORK_SIZE, WORK_SIZE, unit).expect("buffer matches work size");
    let full = imageops::resize(&small_map, w, h, imageops::FilterType::Triangle);
    let (lo, hi) = full
        .pixels()
        .fold((f32::MAX, f32::MIN), |(lo, hi), p| (lo.min(p.0[0]), hi.max(p.0[0])));
    if !(hi - lo).is_normal() {
        return SaliencyMap::uniform(w, h, 0.0);
    }
    SaliencyMap::new(w, h, full.pixels().map(|p| (p.0[0] - lo) / (hi - lo)).collect())
}
