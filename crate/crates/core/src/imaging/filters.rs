use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{check_same, ImageRgb, ScalarField};
use crate::error::{Error, Result};
use crate::math;

/// Pixel-space standard deviation reached at noise level 1.
pub const NOISE_SIGMA_MAX: f64 = 0.5;

/// `10 log10(1 / MSE)` over all channels; `+inf` for identical images.
pub fn psnr(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    check_same(a.dims(), b.dims())?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    let mse = sum / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * math::log10(1.0 / mse))
}

/// Sobel gradient magnitude of the Rec. 601 grayscale image with replicate
/// padding.
pub fn sobel_edge_intensity(img: &ImageRgb) -> Result<ScalarField> {
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return Err(Error::TooSmall { width: w, height: h, kernel: 3 });
    }
    let gray = img.luminance();
    let at = |x: i64, y: i64| -> f64 {
        let xc = x.clamp(0, w as i64 - 1) as usize;
        let yc = y.clamp(0, h as i64 - 1) as usize;
        gray[yc * w + xc]
    };
    let mut out = ScalarField::new(w, h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            out.data[y as usize * w + x as usize] = math::sqrt(gx * gx + gy * gy);
        }
    }
    Ok(out)
}

/// Adds i.i.d. zero-mean Gaussian noise with std `level * NOISE_SIGMA_MAX`
/// and clamps to `[0, 1]`. Deterministic in `seed`.
pub fn perturb_gaussian_noise(img: &ImageRgb, level: f64, seed: u64) -> Result<ImageRgb> {
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::domain("noise level must lie in [0, 1]"));
    }
    if level == 0.0 {
        return Ok(img.clone());
    }
    let samples = noise_samples(img.data.len(), level * NOISE_SIGMA_MAX, seed);
    let data = img.data.iter().zip(samples).map(|(v, n)| (v + n).clamp(0.0, 1.0)).collect();
    Ok(ImageRgb { width: img.width, height: img.height, data })
}

pub(crate) fn noise_samples(n: usize, std: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).expect("finite non-negative std");
    (0..n).map(|_| normal.sample(&mut rng)).collect()
}
