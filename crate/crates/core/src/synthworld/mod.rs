//! Procedural driving worlds built from dense near-opaque Gaussians, the
//! recorded three-camera dataset, held-out shifted trajectories and
//! simulated LiDAR.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Intrinsics, Pose};
use crate::error::{Error, Result};
use crate::imaging::{DepthMap, ImageRgb};
use crate::math::{self, Mat3, Vec3, QUAT_IDENTITY};
use crate::par;
use crate::raster::{RasterSettings, Rasterization, G_MAX};
use crate::scene::{world_space_primitives, Gaussian, NodePoseTable, Owner, RigidNode, RigidTransform, SceneModel};
use crate::supervision::{LidarFrame, LidarPoint};

pub const CAMERA_NAMES: [&str; 3] = ["front", "left", "right"];
pub const FRONT: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextureSpec {
    /// Checker cell size in meters; 0 disables the checker modulation.
    pub checker: f64,
    pub noise_octaves: u32,
    pub noise_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    /// Width (x), height (y), length (z) in meters.
    pub size: [f64; 3],
    /// Ground-contact center at frame 0.
    pub start: Vec3,
    /// Translation per frame.
    pub velocity: Vec3,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub seed: u64,
    /// Ground extent `[x_min, x_max, z_min, z_max]` in meters.
    pub extent: [f64; 4],
    /// Height of the ground plane (y points down).
    pub ground_y: f64,
    pub road_half_width: f64,
    /// Ground primitive spacing near the road and far from it.
    pub ground_spacing: [f64; 2],
    /// Fine ground spacing is used for `z` below this value.
    pub detail_depth: f64,
    /// Depth of the building end walls.
    pub building_depth: f64,
    pub texture: TextureSpec,
    /// Buildings per roadside.
    pub building_count: usize,
    pub building_length: [f64; 2],
    pub building_height: [f64; 2],
    pub building_gap: [f64; 2],
    /// Distance from the road center to building fronts.
    pub building_setback: f64,
    pub wall_spacing: f64,
    pub vehicles: Vec<VehicleSpec>,
    pub vehicle_spacing: f64,
    /// Frames for which node poses are generated.
    pub frames: usize,
    pub palette: Vec<[f64; 3]>,
    pub sky: [f64; 3],
    pub surface_opacity: f64,
}

impl WorldSpec {
    /// The seed-fixed benchmark world.
    pub fn benchmark(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_CA75);
        let palette = vec![
            [0.72, 0.45, 0.35],
            [0.85, 0.78, 0.62],
            [0.45, 0.52, 0.62],
            [0.62, 0.30, 0.28],
            [0.80, 0.80, 0.76],
            [0.50, 0.58, 0.42],
        ];
        let car_colors = [[0.80, 0.12, 0.10], [0.12, 0.30, 0.75], [0.92, 0.85, 0.20], [0.15, 0.55, 0.25]];
        let lanes = [(4.0, 8.0, 0.45), (-4.0, 42.0, -0.55), (4.0, 28.0, 0.95), (-4.0, 16.0, -0.3)];
        let vehicles = lanes
            .iter()
            .zip(car_colors)
            .map(|(&(x, z, v), color)| VehicleSpec {
                size: [1.8, 1.5, rng.random_range(3.8..4.6)],
                start: Vec3::new(x, 1.6, z),
                velocity: Vec3::new(0.0, 0.0, v),
                color,
            })
            .collect();
        Self {
            seed,
            extent: [-26.0, 26.0, -8.0, 130.0],
            ground_y: 1.6,
            road_half_width: 6.0,
            ground_spacing: [0.45, 1.0],
            detail_depth: 75.0,
            building_depth: 4.0,
            texture: TextureSpec { checker: 1.6, noise_octaves: 3, noise_amplitude: 0.08 },
            building_count: 8,
            building_length: [6.0, 11.0],
            building_height: [3.5, 7.0],
            building_gap: [1.0, 3.0],
            building_setback: 8.5,
            wall_spacing: 0.5,
            vehicles,
            vehicle_spacing: 0.3,
            frames: 40,
            palette,
            sky: [0.55, 0.72, 0.92],
            surface_opacity: 0.95,
        }
    }

    /// A small street for fast tests: two buildings per side, one vehicle.
    pub fn compact(seed: u64) -> Self {
        let mut s = Self::benchmark(seed);
        s.extent = [-10.0, 10.0, -4.0, 34.0];
        s.detail_depth = 30.0;
        s.ground_spacing = [0.6, 1.2];
        s.building_count = 2;
        s.building_height = [3.0, 4.5];
        s.wall_spacing = 0.7;
        s.vehicles.truncate(1);
        s.vehicle_spacing = 0.5;
        s.frames = 10;
        s
    }

    pub fn validate(&self) -> Result<()> {
        let [x0, x1, z0, z1] = self.extent;
        if !(x1 > x0 && z1 > z0) {
            return Err(Error::Config("world extent must be non-empty".into()));
        }
        let positive = [self.ground_spacing[0], self.ground_spacing[1], self.wall_spacing, self.vehicle_spacing];
        if positive.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("primitive spacings must be positive".into()));
        }
        if self.palette.is_empty() {
            return Err(Error::Config("palette must not be empty".into()));
        }
        if !(self.surface_opacity > 0.0 && self.surface_opacity < 1.0) {
            return Err(Error::Config("surface opacity must lie in (0, 1)".into()));
        }
        for r in [self.building_length, self.building_height, self.building_gap] {
            if !(r[0] > 0.0 && r[1] >= r[0]) {
                return Err(Error::Config("building ranges must be positive and ordered".into()));
            }
        }
        Ok(())
    }
}

fn hash(seed: u64, a: i64, b: i64, c: u64) -> f64 {
    let mut z = seed
        .wrapping_add((a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((b as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
        .wrapping_add(c.wrapping_mul(0x1656_67B1_9E37_79F9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth value noise in `[-1, 1]` summed over octaves.
fn value_noise(seed: u64, u: f64, v: f64, octaves: u32) -> f64 {
    let mut total = 0.0;
    let mut amp = 1.0;
    let mut freq = 0.5;
    let mut norm = 0.0;
    for o in 0..octaves {
        let (x, y) = (u * freq, v * freq);
        let (xi, yi) = (math::floor(x), math::floor(y));
        let (fx, fy) = (x - xi, y - yi);
        let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
        let (xi, yi) = (xi as i64, yi as i64);
        let at = |dx: i64, dy: i64| hash(seed, xi + dx, yi + dy, o as u64) * 2.0 - 1.0;
        let top = at(0, 0) * (1.0 - sx) + at(1, 0) * sx;
        let bot = at(0, 1) * (1.0 - sx) + at(1, 1) * sx;
        total += amp * (top * (1.0 - sy) + bot * sy);
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    if norm > 0.0 {
        total / norm
    } else {
        0.0
    }
}

fn shade(c: [f64; 3], k: f64) -> [f64; 3] {
    [(c[0] * k).clamp(0.0, 1.0), (c[1] * k).clamp(0.0, 1.0), (c[2] * k).clamp(0.0, 1.0)]
}

fn ground_color(spec: &WorldSpec, x: f64, z: f64) -> [f64; 3] {
    let t = &spec.texture;
    let n = t.noise_amplitude * value_noise(spec.seed, x, z, t.noise_octaves);
    let checker = if t.checker > 0.0 {
        let cx = math::floor(x / t.checker) as i64;
        let cz = math::floor(z / t.checker) as i64;
        if (cx + cz).rem_euclid(2) == 0 {
            1.0
        } else {
            0.9
        }
    } else {
        1.0
    };
    let ax = math::abs(x);
    let hw = spec.road_half_width;
    let base = if ax < hw {
        let lane = hw / 3.0;
        let dash = math::abs(ax - lane) < 0.18 && math::rem_euclid(z, 6.0) < 3.0;
        let edge = math::abs(ax - (hw - 0.3)) < 0.15;
        if dash || edge {
            return shade([0.92, 0.92, 0.88], 1.0 + 0.5 * n);
        }
        [0.33, 0.33, 0.35]
    } else if ax < hw + 2.0 {
        [0.62, 0.58, 0.52]
    } else {
        [0.30, 0.48, 0.22]
    };
    shade(base, checker * (1.0 + n))
}

fn facade_color(spec: &WorldSpec, base: [f64; 3], u: f64, h: f64, salt: u64) -> [f64; 3] {
    // Window grid: 1.6 m cells, window in the middle of each.
    let cu = math::rem_euclid(u, 1.6);
    let ch = math::rem_euclid(h, 1.8);
    let n = 0.06 * value_noise(spec.seed ^ salt, u * 2.0, h * 2.0, 2);
    if h > 0.6 && (0.35..1.25).contains(&cu) && (0.5..1.4).contains(&ch) {
        shade([0.18, 0.24, 0.32], 1.0 + n)
    } else {
        shade(base, 1.0 + n)
    }
}

fn flat(position: Vec3, normal_axis: usize, spacing: f64, opacity: f64, color: [f64; 3]) -> Gaussian {
    let tangent = math::ln(0.9 * spacing);
    let thin = math::ln(0.03);
    let mut log_scale = Vec3::new(tangent, tangent, tangent);
    log_scale[normal_axis] = thin;
    Gaussian { position, rotation: QUAT_IDENTITY, log_scale, opacity_logit: math::logit(opacity), color }
}

fn steps(lo: f64, hi: f64, spacing: f64) -> impl Iterator<Item = f64> {
    let n = math::floor((hi - lo) / spacing) as usize;
    let pad = 0.5 * ((hi - lo) - n as f64 * spacing);
    (0..=n).map(move |i| lo + pad + i as f64 * spacing)
}

/// Dense-Gaussian world: textured ground, box buildings along both
/// roadsides and box vehicles as rigid nodes with linear per-frame poses.
pub fn generate_world(spec: &WorldSpec) -> Result<SceneModel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let op = spec.surface_opacity;
    let [x0, x1, z0, z1] = spec.extent;
    let near = spec.building_setback + 0.5;
    let mut statics = Vec::new();

    // Fine spacing on the street up to `detail_depth`, coarse elsewhere.
    let (s_near, s_far) = (spec.ground_spacing[0], spec.ground_spacing[1]);
    let zd = spec.detail_depth.clamp(z0, z1);
    let mut ground = |lo_x: f64, hi_x: f64, lo_z: f64, hi_z: f64, sp: f64| {
        if hi_x <= lo_x || hi_z <= lo_z {
            return;
        }
        for z in steps(lo_z, hi_z, sp) {
            for x in steps(lo_x, hi_x, sp) {
                statics.push(flat(Vec3::new(x, spec.ground_y, z), 1, sp, op, ground_color(spec, x, z)));
            }
        }
    };
    ground(x0.max(-near), x1.min(near), z0, zd, s_near);
    ground(x0, -near - 0.5 * s_far, z0, zd, s_far);
    ground(near + 0.5 * s_far, x1, z0, zd, s_far);
    ground(x0, x1, zd + 0.5 * s_far, z1, s_far);

    let ws = spec.wall_spacing;
    for side in [-1.0f64, 1.0] {
        let mut z = z0 + rng.random_range(0.0..spec.building_gap[1]);
        for b in 0..spec.building_count {
            let len = rng.random_range(spec.building_length[0]..=spec.building_length[1]);
            let height = rng.random_range(spec.building_height[0]..=spec.building_height[1]);
            let depth = spec.building_depth;
            let base = spec.palette[rng.random_range(0..spec.palette.len())];
            let salt = (b as u64) * 2 + (side > 0.0) as u64;
            if z + len > zd {
                break;
            }
            let front_x = side * spec.building_setback;
            // Facade facing the road.
            for zz in steps(z, z + len, ws) {
                for h in steps(0.0, height, ws) {
                    let c = facade_color(spec, base, zz - z, h, salt);
                    statics.push(flat(Vec3::new(front_x, spec.ground_y - h, zz), 0, ws, op, c));
                }
            }
            // End walls facing along the road.
            for zz in [z, z + len] {
                for d in steps(0.0, depth, ws) {
                    for h in steps(0.0, height, ws) {
                        let c = facade_color(spec, shade(base, 0.85), d, h, salt + 101);
                        statics.push(flat(Vec3::new(front_x + side * d, spec.ground_y - h, zz), 2, ws, op, c));
                    }
                }
            }
            z += len + rng.random_range(spec.building_gap[0]..=spec.building_gap[1]);
        }
    }

    let mut nodes = Vec::new();
    for (k, v) in spec.vehicles.iter().enumerate() {
        let gaussians = vehicle_primitives(v, spec.vehicle_spacing, op);
        let frame_poses = (0..spec.frames).map(|f| (f, RigidTransform::translation(v.start + v.velocity * f as f64))).collect();
        nodes.push(RigidNode { node_id: k as u32 + 1, gaussians, frame_poses });
    }
    Ok(SceneModel { statics, nodes, background: spec.sky })
}

/// Box surface in the node frame: origin at the ground-contact center,
/// y pointing down, so the body spans `y ∈ [-height, 0]`.
fn vehicle_primitives(v: &VehicleSpec, s: f64, op: f64) -> Vec<Gaussian> {
    let [w, h, l] = v.size;
    let (hw, hl) = (0.5 * w, 0.5 * l);
    let body = |y: f64| -> [f64; 3] {
        let up = -y;
        if up > 0.62 * h && up < 0.95 * h {
            [0.12, 0.14, 0.18]
        } else if up < 0.18 * h {
            [0.08, 0.08, 0.08]
        } else {
            v.color
        }
    };
    let mut out = Vec::new();
    for z in steps(-hl, hl, s) {
        for y in steps(-h, 0.0, s) {
            for x in [-hw, hw] {
                out.push(flat(Vec3::new(x, y, z), 0, s, op, body(y)));
            }
        }
    }
    for x in steps(-hw, hw, s) {
        for y in steps(-h, 0.0, s) {
            for z in [-hl, hl] {
                let mut c = body(y);
                if -y > 0.3 * h && -y < 0.45 * h && math::abs(x) > hw - 0.45 {
                    c = if z > 0.0 { [0.95, 0.95, 0.80] } else { [0.85, 0.10, 0.08] };
                }
                out.push(flat(Vec3::new(x, y, z), 2, s, op, c));
            }
        }
        for z in steps(-hl, hl, s) {
            out.push(flat(Vec3::new(x, -h, z), 1, s, op, shade(v.color, 0.8)));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LidarPattern {
    pub azimuth_count: usize,
    pub elevation_count: usize,
    /// Lowest and highest beam elevation in degrees (positive is up).
    pub elevation_range: [f64; 2],
    pub max_range: f64,
}

impl Default for LidarPattern {
    fn default() -> Self {
        Self { azimuth_count: 360, elevation_count: 24, elevation_range: [-24.0, 12.0], max_range: 60.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaptureSpec {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub side_yaw_deg: f64,
    /// Rig center at frame 0 and its displacement per frame.
    pub ego_start: Vec3,
    pub ego_step: Vec3,
    pub holdout_every: usize,
    /// Lateral shifts of the evaluation trajectories.
    pub shifts: Vec<f64>,
    pub lidar: LidarPattern,
}

impl Default for CaptureSpec {
    fn default() -> Self {
        Self {
            frames: 40,
            width: 96,
            height: 64,
            focal: 55.0,
            side_yaw_deg: 45.0,
            ego_start: Vec3::new(0.0, 0.0, 0.0),
            ego_step: Vec3::new(0.0, 0.0, 0.8),
            holdout_every: 5,
            shifts: vec![1.0, 2.0, 3.0],
            lidar: LidarPattern::default(),
        }
    }
}

impl CaptureSpec {
    /// Ten frames at 32x24 with a sparse LiDAR, matching [`WorldSpec::compact`].
    pub fn compact() -> Self {
        Self {
            frames: 10,
            width: 32,
            height: 24,
            focal: 20.0,
            lidar: LidarPattern { azimuth_count: 120, elevation_count: 12, ..LidarPattern::default() },
            ..Self::default()
        }
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics { fx: self.focal, fy: self.focal, cx: (self.width as f64 - 1.0) / 2.0, cy: (self.height as f64 - 1.0) / 2.0 }
    }

    /// Front, left and right cameras sharing the rig center at `frame`.
    pub fn rig(&self, frame: usize) -> Vec<Camera> {
        let center = self.ego_start + self.ego_step * frame as f64;
        let yaw = self.side_yaw_deg.to_radians();
        [0.0, -yaw, yaw]
            .iter()
            .map(|&a| Camera {
                intrinsics: self.intrinsics(),
                pose: Pose::from_center(math::yaw_matrix(a), center),
                width: self.width,
                height: self.height,
            })
            .collect()
    }

    pub fn holdout(&self) -> Vec<usize> {
        if self.holdout_every == 0 {
            return Vec::new();
        }
        (0..self.frames).step_by(self.holdout_every).collect()
    }

    /// Front camera at `frame` moved laterally by `(-1)^frame · shift`.
    pub fn shifted_front(&self, frame: usize, shift: f64) -> Camera {
        let front = self.rig(frame)[FRONT];
        let sign = if frame.is_multiple_of(2) { 1.0 } else { -1.0 };
        let lateral: Vec3 = front.pose.rotation.row(0).transpose();
        let center = front.center() + lateral * (sign * shift);
        front.with_pose(Pose::from_center(front.pose.rotation.transpose(), center))
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.width < 11 || self.height < 11 || !(self.focal > 0.0) {
            return Err(Error::Config("capture needs frames and images of at least 11x11".into()));
        }
        let p = &self.lidar;
        if p.azimuth_count == 0 || p.elevation_count == 0 || !(p.max_range > 0.0) {
            return Err(Error::Config("LiDAR pattern must have rays and a positive range".into()));
        }
        if !(p.elevation_range[0] < p.elevation_range[1]) || p.elevation_range.iter().any(|e| e.abs() >= 60.0) {
            return Err(Error::Config("LiDAR elevations must be ordered and within ±60°".into()));
        }
        Ok(())
    }
}

/// Ground-truth images along one shifted evaluation trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct NovelSet {
    pub shift: f64,
    pub frames: Vec<usize>,
    pub cameras: Vec<Camera>,
    pub images: Vec<ImageRgb>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Rig cameras per frame, in [`CAMERA_NAMES`] order.
    pub cameras: Vec<Vec<Camera>>,
    pub images: Vec<Vec<ImageRgb>>,
    pub depths: Vec<Vec<DepthMap>>,
    pub lidar: Vec<LidarFrame>,
    pub node_poses: NodePoseTable,
    pub holdout: Vec<usize>,
    pub novel_gt: Vec<NovelSet>,
}

impl Dataset {
    pub fn frame_count(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_holdout(&self, frame: usize) -> bool {
        self.holdout.contains(&frame)
    }

    pub fn training_frames(&self) -> Vec<usize> {
        (0..self.frame_count()).filter(|f| !self.is_holdout(*f)).collect()
    }

    pub fn novel_set(&self, shift: f64) -> Option<&NovelSet> {
        self.novel_gt.iter().find(|s| s.shift == shift)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frame_count();
        if self.images.len() != n || self.depths.len() != n {
            return Err(Error::domain("dataset collections differ in frame count"));
        }
        for f in 0..n {
            if self.images[f].len() != self.cameras[f].len() || self.depths[f].len() != self.cameras[f].len() {
                return Err(Error::domain(alloc::format!("frame {f} lacks an image or depth per camera")));
            }
        }
        if self.holdout.iter().any(|&h| h >= n) {
            return Err(Error::domain("holdout frame out of range"));
        }
        Ok(())
    }
}

/// Renders every rig camera at every frame, simulates LiDAR per frame and
/// renders the shifted evaluation sets. Images are snapped to 8-bit levels
/// and depths and LiDAR to single precision, matching the file formats.
pub fn render_dataset(world: &SceneModel, capture: &CaptureSpec) -> Result<Dataset> {
    capture.validate()?;
    let settings = RasterSettings::default();
    let per_frame = par::map_collect(capture.frames, |f| -> Result<_> {
        let cams = capture.rig(f);
        let prims = world_space_primitives(world, f)?;
        let mut imgs = Vec::new();
        let mut depths = Vec::new();
        for c in &cams {
            let mut out = Rasterization::from_world(prims.clone(), world.background, c, settings).render();
            out.color.quantize_u8();
            out.depth.quantize_f32();
            imgs.push(out.color);
            depths.push(out.depth);
        }
        let mut lidar = simulate_lidar(world, &cams[FRONT].pose, f, &capture.lidar)?;
        for p in &mut lidar.points {
            p.position = p.position.map(|v| v as f32 as f64);
            p.color = p.color.map(|v| v as f32 as f64);
        }
        Ok((cams, imgs, depths, lidar))
    });
    let mut ds = Dataset {
        cameras: Vec::new(),
        images: Vec::new(),
        depths: Vec::new(),
        lidar: Vec::new(),
        node_poses: world.node_pose_table(),
        holdout: capture.holdout(),
        novel_gt: Vec::new(),
    };
    for r in per_frame {
        let (c, i, d, l) = r?;
        ds.cameras.push(c);
        ds.images.push(i);
        ds.depths.push(d);
        ds.lidar.push(l);
    }
    for &shift in &capture.shifts {
        let frames: Vec<usize> = (0..capture.frames).collect();
        let cameras: Vec<Camera> = frames.iter().map(|&f| capture.shifted_front(f, shift)).collect();
        let images = par::map_collect(frames.len(), |i| {
            Rasterization::new(world, &cameras[i], frames[i], settings).map(|r| {
                let mut img = r.render().color;
                img.quantize_u8();
                img
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        ds.novel_gt.push(NovelSet { shift, frames, cameras, images });
    }
    Ok(ds)
}

const LIDAR_SECTORS: usize = 8;
const LIDAR_HIT_ALPHA: f64 = 0.5;
/// Plane hits farther than this many scales from the primitive are rejected.
const LIDAR_REACH_SIGMA: f64 = 4.0;

/// Casts the angular ray grid from the sensor center of `pose` (sensor axes
/// as for cameras: x right, y down, z forward). Each ray reports the first
/// primitive at which accumulated alpha along the ray reaches 0.5; eight
/// fine-resolution virtual sector cameras supply the candidates.
pub fn simulate_lidar(world: &SceneModel, pose: &Pose, frame: usize, pattern: &LidarPattern) -> Result<LidarFrame> {
    let prims = world_space_primitives(world, frame)?;
    let owners = world.owners();
    let node_ids: Vec<Option<u32>> = owners
        .iter()
        .map(|o| match o {
            Owner::Static => None,
            Owner::Node(k) => Some(world.nodes[*k].node_id),
        })
        .collect();
    let center = pose.center();
    let sensor_to_world: Mat3 = pose.rotation.transpose();
    let [e0, e1] = pattern.elevation_range;
    let max_abs_elev = e0.abs().max(e1.abs()).to_radians();
    let half_sector = core::f64::consts::PI / LIDAR_SECTORS as f64;
    let step = (2.0 * core::f64::consts::PI / pattern.azimuth_count as f64)
        .min((e1 - e0).to_radians() / pattern.elevation_count.max(2) as f64);
    let focal = 2.0 / math::sin(step).max(1e-3);
    let half_w = focal * (math::sin(half_sector) / math::cos(half_sector)) + 2.0;
    let half_h = focal * math::sin(max_abs_elev) / (math::cos(max_abs_elev) * math::cos(half_sector)) + 2.0;
    let (w, h) = (2 * math::ceil(half_w) as usize + 1, 2 * math::ceil(half_h) as usize + 1);
    let intrinsics = Intrinsics { fx: focal, fy: focal, cx: (w - 1) as f64 / 2.0, cy: (h - 1) as f64 / 2.0 };
    let sectors: Vec<Rasterization> = (0..LIDAR_SECTORS)
        .map(|s| {
            let yaw = 2.0 * half_sector * s as f64;
            let cam = Camera {
                intrinsics,
                pose: Pose::from_center(sensor_to_world * math::yaw_matrix(yaw), center),
                width: w,
                height: h,
            };
            Rasterization::from_world(prims.clone(), world.background, &cam, RasterSettings::default())
        })
        .collect();

    let mut points = Vec::new();
    for ei in 0..pattern.elevation_count {
        let elev = if pattern.elevation_count == 1 {
            0.5 * (e0 + e1)
        } else {
            e0 + (e1 - e0) * ei as f64 / (pattern.elevation_count - 1) as f64
        }
        .to_radians();
        for ai in 0..pattern.azimuth_count {
            let az = 2.0 * core::f64::consts::PI * ai as f64 / pattern.azimuth_count as f64;
            // Sensor frame: azimuth from +z toward +x, elevation up (-y).
            let dir_s = Vec3::new(math::cos(elev) * math::sin(az), -math::sin(elev), math::cos(elev) * math::cos(az));
            let sector = (math::round(az / (2.0 * half_sector)) as usize) % LIDAR_SECTORS;
            let r = &sectors[sector];
            let dir_w = sensor_to_world * dir_s;
            let dc = r.camera.pose.rotation * dir_w;
            if dc.z <= 0.0 {
                continue;
            }
            let (x, y) = (intrinsics.fx * dc.x / dc.z + intrinsics.cx, intrinsics.fy * dc.y / dc.z + intrinsics.cy);
            let (xi, yi) = (math::round(x), math::round(y));
            if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
                continue;
            }
            let Some(src) = ray_first_hit(r, xi as usize, yi as usize, &center, &dir_w) else { continue };
            let range = surface_hit_along_ray(&r.world[src], &center, &dir_w);
            if !(range > 0.0) {
                continue;
            }
            if range > pattern.max_range {
                continue;
            }
            points.push(LidarPoint { position: center + dir_w * range, color: r.world[src].color, node_id: node_ids[src] });
        }
    }
    Ok(LidarFrame { frame, points })
}

/// Source index of the primitive at which accumulated alpha along the ray
/// reaches the hit threshold. Candidates are the splats binned at the
/// sector pixel; each contributes its peak 3D response along the ray, in
/// order of where that peak lies.
fn ray_first_hit(r: &Rasterization, px: usize, py: usize, o: &Vec3, d: &Vec3) -> Option<usize> {
    let mut hits: Vec<(f64, usize, f64)> = r
        .pixel_list(px, py)
        .iter()
        .filter_map(|&k| {
            let src = r.splats[k as usize].source;
            let (t, alpha) = ray_response(&r.world[src], o, d);
            (t > 0.0 && alpha > 0.0).then_some((t, src, alpha))
        })
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut trans = 1.0;
    for (_, src, alpha) in hits {
        trans *= 1.0 - alpha;
        if 1.0 - trans >= LIDAR_HIT_ALPHA {
            return Some(src);
        }
    }
    None
}

/// Ray parameter of the peak Gaussian response along `o + t·d` and the
/// opacity-weighted response there.
fn ray_response(g: &Gaussian, o: &Vec3, d: &Vec3) -> (f64, f64) {
    let rt = g.rotation_matrix().transpose();
    let inv = g.log_scale.map(|s| math::exp(-s));
    let o_l = (rt * (o - g.position)).component_mul(&inv);
    let d_l = (rt * d).component_mul(&inv);
    let dd = d_l.norm_squared();
    if !(dd > 0.0) {
        return (f64::NAN, 0.0);
    }
    let t = -o_l.dot(&d_l) / dd;
    let m = (o_l + d_l * t).norm_squared();
    (t, g.opacity() * math::exp(-0.5 * m).min(G_MAX))
}

/// Distance along the unit ray `o + r·d` to the plane through the
/// primitive's center spanned by its two largest axes. Grazing rays whose
/// plane hit falls outside the primitive's footprint use the ray point
/// closest to the center instead.
fn surface_hit_along_ray(g: &Gaussian, o: &Vec3, d: &Vec3) -> f64 {
    let r = plane_hit_along_ray(g, o, d);
    let reach = LIDAR_REACH_SIGMA * math::exp(g.log_scale.max());
    if r.is_finite() && (o + d * r - g.position).norm() <= reach {
        return r;
    }
    d.dot(&(g.position - o))
}

fn plane_hit_along_ray(g: &Gaussian, o: &Vec3, d: &Vec3) -> f64 {
    let ls = g.log_scale;
    let k = if ls.x <= ls.y && ls.x <= ls.z {
        0
    } else if ls.y <= ls.z {
        1
    } else {
        2
    };
    let n: Vec3 = g.rotation_matrix().column(k).into_owned();
    let denom = n.dot(d);
    if math::abs(denom) < 1e-9 {
        return f64::NAN;
    }
    n.dot(&(g.position - o)) / denom
}
