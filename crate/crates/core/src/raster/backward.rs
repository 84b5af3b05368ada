use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Matrix2, Matrix2x3, Vector3};

use super::{ProjectionCache, RasterSettings, Rasterization, Splat, ALPHA_MIN, G_MAX, T_STOP};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::math::{self, Mat3};
use crate::par;
use crate::scene::{Owner, ParamGradients, SceneModel};

/// Gradient of the loss with respect to one splat's 2D quantities.
#[derive(Debug, Clone, Copy, Default)]
struct SplatGrad {
    center: [f64; 2],
    /// With respect to the conic entries `[a, b, c]` of `[[a, b], [b, c]]`.
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    depth: f64,
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        self.center[0] += o.center[0];
        self.center[1] += o.center[1];
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
        self.depth += o.depth;
    }
}

const ROW_BANDS: usize = 8;

struct Entry {
    splat: u32,
    alpha: f64,
    g: f64,
    clamped: bool,
    t: f64,
    dx: f64,
    dy: f64,
}

impl Rasterization {
    fn pixel_backward(&self, x: usize, y: usize, gc: [f64; 3], gd: f64, scratch: &mut Vec<Entry>, out: &mut [SplatGrad]) {
        scratch.clear();
        let (px, py) = (x as f64, y as f64);
        let cutoff = self.support_power();
        let mut t = 1.0;
        let mut acc = 0.0;
        let mut depth_acc = 0.0;
        for &k in self.pixel_list(x, y) {
            let s = &self.splats[k as usize];
            let (power, dx, dy) = s.power(px, py);
            if power > cutoff {
                continue;
            }
            let raw = math::exp(-power);
            let g = raw.min(G_MAX);
            let alpha = s.opacity * g;
            scratch.push(Entry { splat: k, alpha, g, clamped: raw > G_MAX, t, dx, dy });
            acc += alpha * t;
            depth_acc += alpha * t * s.depth;
            t *= 1.0 - alpha;
            if t < T_STOP {
                break;
            }
        }
        let depth_valid = acc >= ALPHA_MIN;
        let depth = if depth_valid { depth_acc / acc } else { 0.0 };
        let gd = if depth_valid { gd } else { 0.0 };
        let bg = self.background;
        // Σ_{m>k} dL/dw_m · w_m, built back to front.
        let mut tail = 0.0;
        for e in scratch.iter().rev() {
            let s: &Splat = &self.splats[e.splat as usize];
            let w = e.alpha * e.t;
            let mut dl_dw = 0.0;
            for ch in 0..3 {
                dl_dw += gc[ch] * (s.color[ch] - bg[ch]);
            }
            if depth_valid {
                dl_dw += gd * (s.depth - depth) / acc;
            }
            let dl_dalpha = dl_dw * e.t - tail / (1.0 - e.alpha);
            tail += dl_dw * w;

            let o = &mut out[e.splat as usize];
            for ch in 0..3 {
                o.color[ch] += gc[ch] * w;
            }
            if depth_valid {
                o.depth += gd * w / acc;
            }
            o.opacity += dl_dalpha * e.g;
            if !e.clamped {
                let dl_dpower = -e.g * s.opacity * dl_dalpha;
                let [a, b, c] = s.conic;
                o.center[0] -= dl_dpower * (a * e.dx + b * e.dy);
                o.center[1] -= dl_dpower * (b * e.dx + c * e.dy);
                o.conic[0] += dl_dpower * 0.5 * e.dx * e.dx;
                o.conic[1] += dl_dpower * e.dx * e.dy;
                o.conic[2] += dl_dpower * 0.5 * e.dy * e.dy;
            }
        }
    }

    /// Gradients with respect to the world-space parameters of every
    /// flattened primitive, given per-pixel loss gradients.
    pub fn backward_world(&self, grad_color: &[f64], grad_depth: Option<&[f64]>) -> Result<ParamGradients> {
        let (w, h) = (self.camera.width, self.camera.height);
        if grad_color.len() != w * h * 3 {
            return Err(Error::Shape { expected: (w * h, 3), actual: (grad_color.len() / 3, 3) });
        }
        if let Some(gd) = grad_depth {
            if gd.len() != w * h {
                return Err(Error::Shape { expected: (w, h), actual: (gd.len(), 1) });
            }
            if !gd.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric("non-finite depth gradient".into()));
            }
        }
        if !grad_color.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite color gradient".into()));
        }
        let n = self.splats.len();
        let bands = ROW_BANDS.min(h);
        let band = h.div_ceil(bands);
        let partials = par::map_collect(bands, |b| {
            let mut out = vec![SplatGrad::default(); n];
            let mut scratch = Vec::new();
            for y in b * band..((b + 1) * band).min(h) {
                for x in 0..w {
                    let i = y * w + x;
                    let gc = [grad_color[3 * i], grad_color[3 * i + 1], grad_color[3 * i + 2]];
                    let gd = grad_depth.map_or(0.0, |g| g[i]);
                    if gc == [0.0; 3] && gd == 0.0 {
                        continue;
                    }
                    self.pixel_backward(x, y, gc, gd, &mut scratch, &mut out);
                }
            }
            out
        });
        let mut total = vec![SplatGrad::default(); n];
        for p in &partials {
            for (t, g) in total.iter_mut().zip(p) {
                t.add(g);
            }
        }
        let per_splat =
            par::map_collect(n, |k| splat_to_world(&self.world[self.splats[k].source], &self.caches[k], &self.camera, &total[k]));
        let mut grads = ParamGradients::zeros(self.world.len());
        for (k, g) in per_splat.into_iter().enumerate() {
            let i = self.splats[k].source;
            grads.position[i] = g.position;
            grads.rotation[i] = g.rotation;
            grads.log_scale[i] = g.log_scale;
            grads.opacity_logit[i] = g.opacity_logit;
            grads.color[i] = g.color;
        }
        Ok(grads)
    }
}

struct PrimGrad {
    position: [f64; 3],
    rotation: [f64; 4],
    log_scale: [f64; 3],
    opacity_logit: f64,
    color: [f64; 3],
}

fn splat_to_world(g: &crate::scene::Gaussian, cache: &ProjectionCache, cam: &Camera, sg: &SplatGrad) -> PrimGrad {
    let k = &cam.intrinsics;
    let t = cache.t;
    let (iz, iz2, iz3) = (1.0 / t.z, 1.0 / (t.z * t.z), 1.0 / (t.z * t.z * t.z));

    // Conic gradient as a symmetric matrix, then through the inverse.
    let gm = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
    let c2 = cache.jw * cache.cov3 * cache.jw.transpose();
    let floor = super::SIGMA_FLOOR * super::SIGMA_FLOOR;
    let cov2 =
        Matrix2::new(c2[(0, 0)] + floor, 0.5 * (c2[(0, 1)] + c2[(1, 0)]), 0.5 * (c2[(0, 1)] + c2[(1, 0)]), c2[(1, 1)] + floor);
    let conic = cov2.try_inverse().unwrap_or_else(Matrix2::zeros);
    let g_cov2 = -(conic * gm * conic);

    let g_cov3: Mat3 = cache.jw.transpose() * g_cov2 * cache.jw;
    let g_jw: Matrix2x3<f64> = 2.0 * g_cov2 * cache.jw * cache.cov3;
    let gj: Matrix2x3<f64> = g_jw * cam.pose.rotation.transpose();

    let mut gt = Vector3::new(
        gj[(0, 2)] * (-k.fx * iz2),
        gj[(1, 2)] * (-k.fy * iz2),
        gj[(0, 0)] * (-k.fx * iz2)
            + gj[(0, 2)] * (2.0 * k.fx * t.x * iz3)
            + gj[(1, 1)] * (-k.fy * iz2)
            + gj[(1, 2)] * (2.0 * k.fy * t.y * iz3),
    );
    let [gu, gv] = sg.center;
    gt.x += gu * k.fx * iz;
    gt.y += gv * k.fy * iz;
    gt.z += -gu * k.fx * t.x * iz2 - gv * k.fy * t.y * iz2 + sg.depth;
    let gpos = cam.pose.rotation.transpose() * gt;

    let r = g.rotation_matrix();
    let s2 = Vector3::new(math::exp(2.0 * g.log_scale.x), math::exp(2.0 * g.log_scale.y), math::exp(2.0 * g.log_scale.z));
    let gr = 2.0 * g_cov3 * r * Mat3::from_diagonal(&s2);
    let rtgr = r.transpose() * g_cov3 * r;
    let o = g.opacity();
    PrimGrad {
        position: [gpos.x, gpos.y, gpos.z],
        rotation: math::quat_to_matrix_vjp(&g.rotation, &gr),
        log_scale: [2.0 * s2.x * rtgr[(0, 0)], 2.0 * s2.y * rtgr[(1, 1)], 2.0 * s2.z * rtgr[(2, 2)]],
        opacity_logit: sg.opacity * o * (1.0 - o),
        color: sg.color,
    }
}

/// Pulls world-space gradients back through the node transforms at `frame`.
pub fn to_scene_gradients(scene: &SceneModel, frame: usize, mut grads: ParamGradients) -> Result<ParamGradients> {
    let poses = scene.node_poses_at(frame)?;
    let mats: Vec<Mat3> = poses.iter().map(|p| p.matrix()).collect();
    for (i, owner) in scene.owners().into_iter().enumerate() {
        if let Owner::Node(k) = owner {
            let gp = Vector3::from(grads.position[i]);
            let local = mats[k].transpose() * gp;
            grads.position[i] = [local.x, local.y, local.z];
            grads.rotation[i] = math::quat_mul_right_vjp(&poses[k].rotation, &grads.rotation[i]);
        }
    }
    Ok(grads)
}

/// Analytic gradients of the rendered color and depth with respect to every
/// scene parameter. `grad_color` is interleaved RGB per pixel.
pub fn render_backward(
    scene: &SceneModel,
    cam: &Camera,
    frame: usize,
    grad_color: &[f64],
    grad_depth: Option<&[f64]>,
    settings: RasterSettings,
) -> Result<ParamGradients> {
    let r = Rasterization::new(scene, cam, frame, settings)?;
    let g = r.backward_world(grad_color, grad_depth)?;
    to_scene_gradients(scene, frame, g)
}
