//! Differentiable Gaussian rasterizer: EWA projection of each primitive to
//! a 2D splat, a global front-to-back depth sort, and per-pixel alpha
//! compositing of color, center depth and coverage.

mod backward;

pub use backward::{render_backward, to_scene_gradients};

use alloc::vec;
use alloc::vec::Vec;

use crate::camera::{project, Camera};
use crate::error::{Error, Result};
use crate::imaging::{DepthMap, ImageRgb, ScalarField};
use crate::math::{self, Mat3};
use crate::par;
use crate::scene::{covariance_of, world_space_primitives, Gaussian, SceneModel};

/// Splats whose center is this close to the camera plane are culled.
pub const NEAR_PLANE: f64 = 0.05;
/// Low-pass floor added to the projected covariance, in pixels.
pub const SIGMA_FLOOR: f64 = 0.3;
/// Below this accumulated alpha the blended depth is invalid.
pub const ALPHA_MIN: f64 = 1e-4;
/// Upper clamp of the per-splat Gaussian falloff.
pub const G_MAX: f64 = 0.999;
/// Compositing stops once transmittance falls below this value.
pub const T_STOP: f64 = 1e-4;
/// Primitives whose 3-sigma ellipse misses the image are culled.
pub const CULL_SIGMA: f64 = 3.0;
const FRUSTUM_SLACK: f64 = 1.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterSettings {
    /// Per-pixel evaluation radius in standard deviations. Contributions
    /// beyond it are skipped; `f64::INFINITY` evaluates every splat at
    /// every pixel.
    pub support_sigma: f64,
}

impl RasterSettings {
    pub const EXACT: Self = Self { support_sigma: f64::INFINITY };
}

impl Default for RasterSettings {
    fn default() -> Self {
        Self { support_sigma: 3.5 }
    }
}

/// A primitive projected onto the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat {
    pub center: [f64; 2],
    /// Symmetric 2x2 covariance `[xx, xy, yy]` including the floor.
    pub cov: [f64; 3],
    /// Inverse covariance `[xx, xy, yy]`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Index into the flattened primitive list.
    pub source: usize,
}

impl Splat {
    /// `0.5 * δᵀ Σ⁻¹ δ` at pixel coordinates `(x, y)`.
    #[inline]
    pub fn power(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        let [a, b, c] = self.conic;
        (0.5 * (a * dx * dx + c * dy * dy) + b * dx * dy, dx, dy)
    }

    pub fn max_std(&self) -> f64 {
        let [a, b, c] = self.cov;
        let mid = 0.5 * (a + c);
        let det = a * c - b * b;
        math::sqrt(mid + math::sqrt((mid * mid - det).max(0.0)))
    }
}

/// Intermediate quantities of the projection reused by the backward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ProjectionCache {
    /// Camera-space center.
    pub t: nalgebra::Vector3<f64>,
    /// `J W`, the 2x3 linearized projection.
    pub jw: nalgebra::Matrix2x3<f64>,
    pub cov3: Mat3,
}

pub(crate) fn project_cached(g: &Gaussian, cam: &Camera) -> Option<(Splat, ProjectionCache)> {
    let t = cam.pose.apply(&g.position);
    if !(t.z > NEAR_PLANE) {
        return None;
    }
    let p = project(&g.position, cam).ok()?;
    let k = &cam.intrinsics;
    if !in_frustum(&t, cam) {
        return None;
    }
    let (iz, iz2) = (1.0 / t.z, 1.0 / (t.z * t.z));
    let j = nalgebra::Matrix2x3::new(k.fx * iz, 0.0, -k.fx * t.x * iz2, 0.0, k.fy * iz, -k.fy * t.y * iz2);
    let jw = j * cam.pose.rotation;
    let cov3 = covariance_of(g);
    let c2 = jw * cov3 * jw.transpose();
    let floor = SIGMA_FLOOR * SIGMA_FLOOR;
    let cov = [c2[(0, 0)] + floor, 0.5 * (c2[(0, 1)] + c2[(1, 0)]), c2[(1, 1)] + floor];
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [cov[2] / det, -cov[1] / det, cov[0] / det];
    let splat = Splat { center: [p.x, p.y], cov, conic, depth: t.z, opacity: g.opacity(), color: g.color, source: 0 };
    let r = CULL_SIGMA * splat.max_std();
    let (w, h) = (cam.width as f64, cam.height as f64);
    if p.x + r < -0.5 || p.x - r > w - 0.5 || p.y + r < -0.5 || p.y - r > h - 0.5 {
        return None;
    }
    Some((splat, ProjectionCache { t, jw, cov3 }))
}

/// Whether the center direction lies within 1.3 times the half field of
/// view, outside of which the linearized footprint is unreliable.
#[inline]
fn in_frustum(t: &nalgebra::Vector3<f64>, cam: &Camera) -> bool {
    let k = &cam.intrinsics;
    let lim_x = FRUSTUM_SLACK * (cam.width as f64 * 0.5) / k.fx;
    let lim_y = FRUSTUM_SLACK * (cam.height as f64 * 0.5) / k.fy;
    math::abs(t.x / t.z) <= lim_x && math::abs(t.y / t.z) <= lim_y
}

/// First-order EWA projection of a world-space primitive; `None` when culled.
pub fn project_to_splat(g: &Gaussian, cam: &Camera) -> Option<Splat> {
    project_cached(g, cam).map(|(s, _)| s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub color: ImageRgb,
    pub depth: DepthMap,
    pub alpha: ScalarField,
}

/// Projected, sorted and binned splats for one camera.
pub struct Rasterization {
    pub camera: Camera,
    pub background: [f64; 3],
    pub settings: RasterSettings,
    /// World-space primitives in flattened order.
    pub world: Vec<Gaussian>,
    /// Visible splats sorted by ascending depth, ties by source index.
    pub splats: Vec<Splat>,
    pub(crate) caches: Vec<ProjectionCache>,
    offsets: Vec<u32>,
    entries: Vec<u32>,
}

/// Per-pixel compositing result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelSample {
    pub color: [f64; 3],
    pub depth: f64,
    pub alpha: f64,
    pub contributors: u32,
}

impl Rasterization {
    pub fn new(scene: &SceneModel, cam: &Camera, frame: usize, settings: RasterSettings) -> Result<Self> {
        if cam.width == 0 || cam.height == 0 {
            return Err(Error::domain("camera has an empty image"));
        }
        let world = world_space_primitives(scene, frame)?;
        Ok(Self::from_world(world, scene.background, cam, settings))
    }

    pub fn from_world(world: Vec<Gaussian>, background: [f64; 3], cam: &Camera, settings: RasterSettings) -> Self {
        let projected = par::map_collect(world.len(), |i| {
            project_cached(&world[i], cam).map(|(mut s, c)| {
                s.source = i;
                (s, c)
            })
        });
        let mut visible: Vec<(Splat, ProjectionCache)> = projected.into_iter().flatten().collect();
        visible.sort_by(|a, b| a.0.depth.total_cmp(&b.0.depth).then(a.0.source.cmp(&b.0.source)));
        let (splats, caches): (Vec<_>, Vec<_>) = visible.into_iter().unzip();
        let (offsets, entries) = bin(&splats, cam, settings);
        Self { camera: *cam, background, settings, world, splats, caches, offsets, entries }
    }

    #[inline]
    pub(crate) fn pixel_list(&self, x: usize, y: usize) -> &[u32] {
        let i = y * self.camera.width + x;
        &self.entries[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }

    #[inline]
    pub(crate) fn support_power(&self) -> f64 {
        0.5 * self.settings.support_sigma * self.settings.support_sigma
    }

    /// Composites the splats binned at pixel `(x, y)`.
    pub fn composite_pixel(&self, x: usize, y: usize) -> PixelSample {
        let (px, py) = (x as f64, y as f64);
        let cutoff = self.support_power();
        let mut t = 1.0;
        let mut color = [0.0; 3];
        let mut depth_acc = 0.0;
        let mut acc = 0.0;
        let mut n = 0;
        for &k in self.pixel_list(x, y) {
            let s = &self.splats[k as usize];
            let (power, _, _) = s.power(px, py);
            if power > cutoff {
                continue;
            }
            let g = math::exp(-power).min(G_MAX);
            let alpha = s.opacity * g;
            let w = alpha * t;
            for ch in 0..3 {
                color[ch] += w * s.color[ch];
            }
            depth_acc += w * s.depth;
            acc += w;
            n += 1;
            t *= 1.0 - alpha;
            if t < T_STOP {
                break;
            }
        }
        for ch in 0..3 {
            color[ch] += (1.0 - acc) * self.background[ch];
        }
        let depth = if acc >= ALPHA_MIN { depth_acc / acc } else { f64::INFINITY };
        PixelSample { color, depth, alpha: acc, contributors: n }
    }

    /// Walks the splats at the continuous point `(x, y)` and returns the
    /// first splat at which accumulated alpha reaches `threshold`.
    pub fn first_hit(&self, x: f64, y: f64, threshold: f64) -> Option<&Splat> {
        let (w, h) = (self.camera.width, self.camera.height);
        let xi = math::round(x);
        let yi = math::round(y);
        if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
            return None;
        }
        let cutoff = self.support_power();
        let mut t = 1.0;
        for &k in self.pixel_list(xi as usize, yi as usize) {
            let s = &self.splats[k as usize];
            let (power, _, _) = s.power(x, y);
            if power > cutoff {
                continue;
            }
            t *= 1.0 - s.opacity * math::exp(-power).min(G_MAX);
            if 1.0 - t >= threshold {
                return Some(s);
            }
            if t < T_STOP {
                break;
            }
        }
        None
    }

    pub fn render(&self) -> RenderOutput {
        let (w, h) = (self.camera.width, self.camera.height);
        let rows = par::map_collect(h, |y| (0..w).map(|x| self.composite_pixel(x, y)).collect::<Vec<_>>());
        let mut color = ImageRgb::new(w, h);
        let mut depth = DepthMap::invalid(w, h);
        let mut alpha = ScalarField::new(w, h);
        for (y, row) in rows.into_iter().enumerate() {
            for (x, s) in row.into_iter().enumerate() {
                let i = y * w + x;
                color.data[i * 3..i * 3 + 3].copy_from_slice(&s.color);
                depth.data[i] = s.depth;
                alpha.data[i] = s.alpha;
            }
        }
        RenderOutput { color, depth, alpha }
    }

    /// Number of splats composited at each pixel.
    pub fn contributor_counts(&self) -> ScalarField {
        let (w, h) = (self.camera.width, self.camera.height);
        let mut out = ScalarField::new(w, h);
        for y in 0..h {
            for x in 0..w {
                out.data[y * w + x] = self.composite_pixel(x, y).contributors as f64;
            }
        }
        out
    }
}

/// Per-pixel lists of splat indices (in sorted order), stored as CSR.
fn bin(splats: &[Splat], cam: &Camera, settings: RasterSettings) -> (Vec<u32>, Vec<u32>) {
    let (w, h) = (cam.width, cam.height);
    let ranges: Vec<(usize, usize, usize, usize)> = splats
        .iter()
        .map(|s| {
            let r = settings.support_sigma * s.max_std();
            if !r.is_finite() {
                return (0, w - 1, 0, h - 1);
            }
            let clamp = |v: f64, hi: usize| -> usize { v.clamp(0.0, hi as f64) as usize };
            let x0 = clamp(math::ceil(s.center[0] - r), w - 1);
            let x1 = clamp(math::floor(s.center[0] + r), w - 1);
            let y0 = clamp(math::ceil(s.center[1] - r), h - 1);
            let y1 = clamp(math::floor(s.center[1] + r), h - 1);
            (x0, x1, y0, y1)
        })
        .collect();
    let mut counts = vec![0u32; w * h + 1];
    for &(x0, x1, y0, y1) in &ranges {
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0..=y1 {
            for c in &mut counts[y * w + x0..=y * w + x1] {
                *c += 1;
            }
        }
    }
    let mut offsets = vec![0u32; w * h + 1];
    for i in 0..w * h {
        offsets[i + 1] = offsets[i] + counts[i];
    }
    let mut cursor = offsets.clone();
    let mut entries = vec![0u32; offsets[w * h] as usize];
    for (k, &(x0, x1, y0, y1)) in ranges.iter().enumerate() {
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                let c = &mut cursor[y * w + x];
                entries[*c as usize] = k as u32;
                *c += 1;
            }
        }
    }
    (offsets, entries)
}

/// Renders color, blended depth and accumulated alpha with default settings.
pub fn render(scene: &SceneModel, cam: &Camera, frame: usize) -> Result<RenderOutput> {
    render_with(scene, cam, frame, RasterSettings::default())
}

pub fn render_with(scene: &SceneModel, cam: &Camera, frame: usize, settings: RasterSettings) -> Result<RenderOutput> {
    Ok(Rasterization::new(scene, cam, frame, settings)?.render())
}
