//! Training signals: the photometric and depth losses, depth-warped pseudo
//! images, side-view merging, unreliability masks and accumulated LiDAR.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::camera::{project, unproject, Camera};
use crate::error::{Error, Result};
use crate::imaging::{check_same, ssim_map, ssim_mean_masked_with_grad, BitMask, DepthMap, ImageRgb, ScalarField};
use crate::math::{self, Vec3};
use crate::raster::RenderOutput;
use crate::scene::NodePoseTable;

/// Weight of the L1 term in the photometric loss.
pub const DEFAULT_LAMBDA: f64 = 0.8;
/// SSIM threshold below which a pixel is unreliable.
pub const DEFAULT_TAU: f64 = 0.65;
pub const OCCLUSION_ABS: f64 = 0.2;
pub const OCCLUSION_REL: f64 = 0.01;
/// Frames on either side of the target merged into one LiDAR condition.
pub const LIDAR_WINDOW: usize = 2;

/// `λ·L1 + (1−λ)·(1 − SSIM)` and its gradient with respect to `render`.
pub fn photometric_loss(render: &ImageRgb, target: &ImageRgb, lambda: f64) -> Result<(f64, Vec<f64>)> {
    photometric_loss_masked(render, target, lambda, None)
}

/// Photometric loss restricted to the pixels where `supervised` is true.
/// Both terms average over the selected pixels only; an empty selection
/// yields zero loss and gradient.
pub fn photometric_loss_masked(
    render: &ImageRgb,
    target: &ImageRgb,
    lambda: f64,
    supervised: Option<&BitMask>,
) -> Result<(f64, Vec<f64>)> {
    check_same(render.dims(), target.dims())?;
    if let Some(m) = supervised {
        check_same(render.dims(), m.dims())?;
    }
    let n = render.pixel_count();
    let selected = |i: usize| supervised.is_none_or(|m| m.data[i]);
    let count = (0..n).filter(|&i| selected(i)).count();
    let mut grad = vec![0.0; n * 3];
    if count == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / (3 * count) as f64;
    let mut l1 = 0.0;
    for i in 0..n {
        if !selected(i) {
            continue;
        }
        for k in 3 * i..3 * i + 3 {
            let d = render.data[k] - target.data[k];
            l1 += math::abs(d);
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad[k] = lambda * sign * inv;
        }
    }
    let mut loss = lambda * l1 * inv;
    if lambda < 1.0 {
        let (s, gs) = ssim_mean_masked_with_grad(render, target, supervised)?;
        loss += (1.0 - lambda) * (1.0 - s);
        for (g, d) in grad.iter_mut().zip(gs) {
            *g -= (1.0 - lambda) * d;
        }
    }
    Ok((loss, grad))
}

/// Colored sparse depth, valid exactly where `coverage` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepthImage {
    pub depth: DepthMap,
    pub color: ImageRgb,
    pub coverage: BitMask,
}

impl SparseDepthImage {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            depth: DepthMap::invalid(width, height),
            color: ImageRgb::new(width, height),
            coverage: BitMask::new(width, height, false),
        }
    }
}

/// Mean absolute depth error over pixels that are covered and validly
/// rendered, with its gradient with respect to the rendered depth.
pub fn depth_loss(render_depth: &DepthMap, sparse: &SparseDepthImage) -> Result<(f64, Vec<f64>)> {
    check_same(render_depth.dims(), sparse.depth.dims())?;
    let n = render_depth.data.len();
    let usable = |i: usize| sparse.coverage.data[i] && render_depth.data[i].is_finite() && sparse.depth.data[i].is_finite();
    let count = (0..n).filter(|&i| usable(i)).count();
    let mut grad = vec![0.0; n];
    if count == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / count as f64;
    let mut loss = 0.0;
    for i in 0..n {
        if !usable(i) {
            continue;
        }
        let d = render_depth.data[i] - sparse.depth.data[i];
        loss += math::abs(d);
        grad[i] = if d > 0.0 {
            inv
        } else if d < 0.0 {
            -inv
        } else {
            0.0
        };
    }
    Ok((loss * inv, grad))
}

/// Warps `source_img` into the novel view through the novel rendered depth.
/// Pixels without a consistent source sample are marked in the returned
/// hole mask and carry the novel render's own color.
pub fn build_pseudo_image(
    novel_render: &RenderOutput,
    novel_cam: &Camera,
    source_img: &ImageRgb,
    source_depth: &DepthMap,
    source_cam: &Camera,
) -> Result<(ImageRgb, BitMask)> {
    let (w, h) = (novel_cam.width, novel_cam.height);
    check_same(novel_render.depth.dims(), (w, h))?;
    check_same(source_img.dims(), (source_cam.width, source_cam.height))?;
    check_same(source_depth.dims(), (source_cam.width, source_cam.height))?;
    let mut pseudo = novel_render.color.clone();
    let mut hole = BitMask::new(w, h, true);
    for y in 0..h {
        for x in 0..w {
            let d = novel_render.depth.get(x, y);
            if !d.is_finite() || d <= 0.0 {
                continue;
            }
            let Ok(p) = unproject(x as f64, y as f64, d, novel_cam) else { continue };
            let Ok(q) = project(&p, source_cam) else { continue };
            let Some(ds) = source_depth.sample_bilinear(q.x, q.y) else { continue };
            if math::abs(q.depth - ds) > OCCLUSION_ABS + OCCLUSION_REL * q.depth {
                continue;
            }
            let Some(c) = source_img.sample_bilinear(q.x, q.y) else { continue };
            pseudo.set(x, y, c);
            hole.set(x, y, false);
        }
    }
    Ok((pseudo, hole))
}

/// Fills holes of the primary warp from auxiliary warps in the given order.
pub fn merge_auxiliary(primary: (ImageRgb, BitMask), auxiliaries: &[(ImageRgb, BitMask)]) -> Result<(ImageRgb, BitMask)> {
    let (mut img, mut hole) = primary;
    for (aux_img, aux_hole) in auxiliaries {
        check_same(img.dims(), aux_img.dims())?;
        check_same(hole.dims(), aux_hole.dims())?;
        for i in 0..hole.data.len() {
            if hole.data[i] && !aux_hole.data[i] {
                img.data[3 * i..3 * i + 3].copy_from_slice(&aux_img.data[3 * i..3 * i + 3]);
                hole.data[i] = false;
            }
        }
    }
    Ok((img, hole))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnreliabilityMask {
    /// True where the render is unreliable.
    pub mask: BitMask,
    pub ssim_evidence: ScalarField,
    /// True where no warp source exists.
    pub hole: BitMask,
}

/// `(ssim_map(rendered, pseudo) < τ) ∪ hole`. τ may be ±1 to mask
/// everything or nothing outside holes.
pub fn unreliability_mask(rendered: &ImageRgb, pseudo: &ImageRgb, hole: &BitMask, tau: f64) -> Result<UnreliabilityMask> {
    if !(-1.0..=1.0).contains(&tau) {
        return Err(Error::domain("mask threshold must lie in [-1, 1]"));
    }
    check_same(rendered.dims(), hole.dims())?;
    let evidence = ssim_map(rendered, pseudo)?;
    let mut mask = hole.clone();
    for (m, &s) in mask.data.iter_mut().zip(&evidence.data) {
        *m |= s < tau;
    }
    Ok(UnreliabilityMask { mask, ssim_evidence: evidence, hole: hole.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    /// World position at the capture frame.
    pub position: Vec3,
    pub color: [f64; 3],
    /// Set for points on a moving node.
    pub node_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarFrame {
    pub frame: usize,
    pub points: Vec<LidarPoint>,
}

/// Projects the LiDAR points of frames within `window` of `target_frame`
/// into `target_cam`, moving node points with their node, nearest depth
/// winning per pixel.
pub fn accumulate_lidar(
    frames: &[LidarFrame],
    nodes: &NodePoseTable,
    target_frame: usize,
    target_cam: &Camera,
    window: usize,
) -> Result<SparseDepthImage> {
    let (w, h) = (target_cam.width, target_cam.height);
    let mut out = SparseDepthImage::empty(w, h);
    let lo = target_frame.saturating_sub(window);
    let hi = target_frame + window;
    for lf in frames.iter().filter(|f| (lo..=hi).contains(&f.frame)) {
        for pt in &lf.points {
            let p = match pt.node_id {
                None => pt.position,
                Some(id) => {
                    let poses = nodes.get(&id).ok_or(Error::MissingNodePose { node_id: id, frame: lf.frame })?;
                    let src = poses.get(&lf.frame).ok_or(Error::MissingNodePose { node_id: id, frame: lf.frame })?;
                    let dst = poses.get(&target_frame).ok_or(Error::MissingNodePose { node_id: id, frame: target_frame })?;
                    dst.apply(&src.inverse_apply(&pt.position))
                }
            };
            let Ok(q) = project(&p, target_cam) else { continue };
            let (xr, yr) = (math::round(q.x), math::round(q.y));
            if xr < 0.0 || yr < 0.0 || xr >= w as f64 || yr >= h as f64 {
                continue;
            }
            let (x, y) = (xr as usize, yr as usize);
            let i = y * w + x;
            if q.depth < out.depth.data[i] {
                out.depth.data[i] = q.depth;
                out.color.set(x, y, pt.color);
                out.coverage.data[i] = true;
            }
        }
    }
    Ok(out)
}
