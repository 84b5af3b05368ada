//! Windowed SSIM on the luminance plane: 11x11 Gaussian window (sigma 1.5),
//! truncated and renormalized at the image border.

use alloc::vec;
use alloc::vec::Vec;

use super::{check_same, BitMask, ImageRgb, ScalarField, LUMA};
use crate::error::{Error, Result};
use crate::math;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
const RADIUS: usize = 5;
const SIGMA: f64 = 1.5;

fn kernel() -> [f64; 2 * RADIUS + 1] {
    let mut k = [0.0; 2 * RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - RADIUS as f64;
        *v = math::exp(-d * d / (2.0 * SIGMA * SIGMA));
    }
    k
}

/// Separable truncated Gaussian filter. With `normalize`, each output is
/// divided by the in-image kernel mass; without it the raw weighted sum is
/// returned (the adjoint of the normalized filter is `raw(u / mass)`).
struct Window {
    w: usize,
    h: usize,
    k: [f64; 2 * RADIUS + 1],
    mass_x: Vec<f64>,
    mass_y: Vec<f64>,
}

impl Window {
    fn new(w: usize, h: usize) -> Self {
        let k = kernel();
        let mass = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|p| {
                    let lo = p.saturating_sub(RADIUS);
                    let hi = (p + RADIUS).min(n - 1);
                    (lo..=hi).map(|q| k[q + RADIUS - p]).sum()
                })
                .collect()
        };
        Self { w, h, k, mass_x: mass(w), mass_y: mass(h) }
    }

    fn raw(&self, src: &[f64]) -> Vec<f64> {
        let (w, h) = (self.w, self.h);
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for x in 0..w {
                let lo = x.saturating_sub(RADIUS);
                let hi = (x + RADIUS).min(w - 1);
                let mut acc = 0.0;
                for q in lo..=hi {
                    acc += self.k[q + RADIUS - x] * row[q];
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            let lo = y.saturating_sub(RADIUS);
            let hi = (y + RADIUS).min(h - 1);
            for q in lo..=hi {
                let kw = self.k[q + RADIUS - y];
                let src_row = &tmp[q * w..(q + 1) * w];
                let dst_row = &mut out[y * w..(y + 1) * w];
                for x in 0..w {
                    dst_row[x] += kw * src_row[x];
                }
            }
        }
        out
    }

    #[inline]
    fn mass(&self, i: usize) -> f64 {
        self.mass_x[i % self.w] * self.mass_y[i / self.w]
    }

    fn normalized(&self, src: &[f64]) -> Vec<f64> {
        let mut out = self.raw(src);
        for (i, v) in out.iter_mut().enumerate() {
            *v /= self.mass(i);
        }
        out
    }

    fn adjoint(&self, u: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = u.iter().enumerate().map(|(i, v)| v / self.mass(i)).collect();
        self.raw(&scaled)
    }
}

struct Moments {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    e_aa: Vec<f64>,
    e_bb: Vec<f64>,
    e_ab: Vec<f64>,
}

fn moments(win: &Window, la: &[f64], lb: &[f64]) -> Moments {
    let aa: Vec<f64> = la.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = lb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = la.iter().zip(lb).map(|(x, y)| x * y).collect();
    Moments {
        mu_a: win.normalized(la),
        mu_b: win.normalized(lb),
        e_aa: win.normalized(&aa),
        e_bb: win.normalized(&bb),
        e_ab: win.normalized(&ab),
    }
}

#[inline]
fn ssim_terms(m: &Moments, i: usize) -> (f64, f64, f64, f64, f64) {
    let (ma, mb) = (m.mu_a[i], m.mu_b[i]);
    let n1 = 2.0 * ma * mb + SSIM_C1;
    let n2 = 2.0 * (m.e_ab[i] - ma * mb) + SSIM_C2;
    let d1 = ma * ma + mb * mb + SSIM_C1;
    let d2 = (m.e_aa[i] - ma * ma) + (m.e_bb[i] - mb * mb) + SSIM_C2;
    (n1 * n2 / (d1 * d2), n1, n2, d1, d2)
}

fn check_inputs(a: &ImageRgb, b: &ImageRgb) -> Result<()> {
    check_same(a.dims(), b.dims())?;
    if a.width == 0 || a.height == 0 {
        return Err(Error::domain("SSIM of an empty image"));
    }
    Ok(())
}

/// Per-pixel local SSIM of the luminance planes, clamped to `[-1, 1]`.
pub fn ssim_map(a: &ImageRgb, b: &ImageRgb) -> Result<ScalarField> {
    check_inputs(a, b)?;
    let win = Window::new(a.width, a.height);
    let m = moments(&win, &a.luminance(), &b.luminance());
    let data = (0..a.pixel_count()).map(|i| ssim_terms(&m, i).0.clamp(-1.0, 1.0)).collect();
    Ok(ScalarField { width: a.width, height: a.height, data })
}

/// Arithmetic mean of [`ssim_map`].
pub fn ssim_mean(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    Ok(ssim_map(a, b)?.mean())
}

/// Mean SSIM over the pixels selected by `mask` (all pixels when `None`)
/// together with its gradient with respect to every channel of `a`.
/// Returns `(0, zeros)`-gradient with value 1 when the selection is empty.
pub fn ssim_mean_masked_with_grad(a: &ImageRgb, b: &ImageRgb, mask: Option<&BitMask>) -> Result<(f64, Vec<f64>)> {
    check_inputs(a, b)?;
    if let Some(m) = mask {
        check_same(a.dims(), m.dims())?;
    }
    let n = a.pixel_count();
    let selected = |i: usize| mask.is_none_or(|m| m.data[i]);
    let count = (0..n).filter(|&i| selected(i)).count();
    if count == 0 {
        return Ok((1.0, vec![0.0; n * 3]));
    }
    let inv = 1.0 / count as f64;
    let win = Window::new(a.width, a.height);
    let la = a.luminance();
    let lb = b.luminance();
    let m = moments(&win, &la, &lb);

    let mut total = 0.0;
    let mut g_mu = vec![0.0; n];
    let mut g_aa = vec![0.0; n];
    let mut g_ab = vec![0.0; n];
    for i in 0..n {
        if !selected(i) {
            continue;
        }
        let (s, n1, n2, d1, d2) = ssim_terms(&m, i);
        let clamped = s.clamp(-1.0, 1.0);
        total += clamped;
        if clamped != s {
            continue;
        }
        let (ma, mb) = (m.mu_a[i], m.mu_b[i]);
        let dd = d1 * d2;
        // dS/dmu_a, dS/dE[aa], dS/dE[ab]
        g_mu[i] = inv * (2.0 * mb * n2 / dd - 2.0 * mb * n1 / dd - s * 2.0 * ma / d1 + s * 2.0 * ma / d2);
        g_aa[i] = inv * (-s / d2);
        g_ab[i] = inv * (2.0 * n1 / dd);
    }
    let t_mu = win.adjoint(&g_mu);
    let t_aa = win.adjoint(&g_aa);
    let t_ab = win.adjoint(&g_ab);
    let mut grad = vec![0.0; n * 3];
    for q in 0..n {
        let dl = t_mu[q] + 2.0 * la[q] * t_aa[q] + lb[q] * t_ab[q];
        for ch in 0..3 {
            grad[q * 3 + ch] = dl * LUMA[ch];
        }
    }
    Ok((total * inv, grad))
}
