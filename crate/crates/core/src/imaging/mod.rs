//! Image, depth and mask containers and the pixel-level numerics built on
//! them. Pixel `(x, y)` has its center at integer coordinates `(x, y)`.

mod filters;
mod ssim;

pub use filters::{perturb_gaussian_noise, psnr, sobel_edge_intensity, NOISE_SIGMA_MAX};
pub use ssim::{ssim_map, ssim_mean, ssim_mean_masked_with_grad, SSIM_C1, SSIM_C2};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Rec. 601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Row-major RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::domain("RGB buffer length does not match dimensions"));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Rec. 601 luminance plane.
    pub fn luminance(&self) -> Vec<f64> {
        self.data.chunks_exact(3).map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]).collect()
    }

    /// Bilinear sample at continuous pixel coordinates; `None` outside the
    /// pixel-center hull.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<[f64; 3]> {
        let (x0, y0, fx, fy) = bilinear_cell(x, y, self.width, self.height)?;
        let mut out = [0.0; 3];
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        for ch in 0..3 {
            let top = a[ch] * (1.0 - fx) + b[ch] * fx;
            let bot = c[ch] * (1.0 - fx) + d[ch] * fx;
            out[ch] = top * (1.0 - fy) + bot * fy;
        }
        Some(out)
    }

    pub fn is_valid(&self) -> bool {
        self.data.len() == self.width * self.height * 3 && self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Snaps every channel to the nearest 8-bit level `round(v·255)/255`.
    pub fn quantize_u8(&mut self) {
        for v in &mut self.data {
            *v = crate::math::round(v.clamp(0.0, 1.0) * 255.0) / 255.0;
        }
    }
}

/// Coordinates this far outside the pixel-center hull count as on it.
pub const HULL_EPS: f64 = 1e-9;

/// Whether `(x, y)` lies in the pixel-center hull of a `w`×`h` grid.
#[inline]
pub fn in_hull(x: f64, y: f64, w: usize, h: usize) -> bool {
    x >= -HULL_EPS && y >= -HULL_EPS && x <= (w - 1) as f64 + HULL_EPS && y <= (h - 1) as f64 + HULL_EPS
}

pub(crate) fn bilinear_cell(x: f64, y: f64, w: usize, h: usize) -> Option<(usize, usize, f64, f64)> {
    if !in_hull(x, y, w, h) {
        return None;
    }
    let (x, y) = (x.clamp(0.0, (w - 1) as f64), y.clamp(0.0, (h - 1) as f64));
    let x0 = crate::math::floor(x) as usize;
    let y0 = crate::math::floor(y) as usize;
    Some((x0, y0, x - x0 as f64, y - y0 as f64))
}

/// Depth in meters; `f64::INFINITY` marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![f64::INFINITY; width * height] }
    }

    pub fn filled(width: usize, height: usize, depth: f64) -> Self {
        Self { width, height, data: vec![depth; width * height] }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Rounds every depth to single precision.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }

    #[inline]
    pub fn is_valid_at(&self, x: usize, y: usize) -> bool {
        is_valid_depth(self.get(x, y))
    }

    /// Bilinear sample; `None` when outside or when any tap with nonzero
    /// weight is invalid.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let (x0, y0, fx, fy) = bilinear_cell(x, y, self.width, self.height)?;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let taps = [
            (self.get(x0, y0), (1.0 - fx) * (1.0 - fy)),
            (self.get(x1, y0), fx * (1.0 - fy)),
            (self.get(x0, y1), (1.0 - fx) * fy),
            (self.get(x1, y1), fx * fy),
        ];
        let mut acc = 0.0;
        for (d, w) in taps {
            if w == 0.0 {
                continue;
            }
            if !is_valid_depth(d) {
                return None;
            }
            acc += d * w;
        }
        Some(acc)
    }
}

#[inline]
pub fn is_valid_depth(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BitMask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.data.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

pub(crate) fn check_same(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Shape { expected: a, actual: b })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_at_pixel_centers_is_exact() {
        let mut img = ImageRgb::new(4, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f64) / 36.0;
        }
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(img.sample_bilinear(x as f64, y as f64).unwrap(), img.get(x, y));
            }
        }
        assert!(img.sample_bilinear(-0.01, 0.0).is_none());
        assert!(img.sample_bilinear(3.0, 2.01).is_none());
    }

    #[test]
    fn depth_sample_rejects_invalid_taps() {
        let mut d = DepthMap::filled(3, 3, 2.0);
        d.data[4] = f64::INFINITY;
        assert_eq!(d.sample_bilinear(0.0, 0.0), Some(2.0));
        assert_eq!(d.sample_bilinear(0.5, 0.5), None);
    }
}
