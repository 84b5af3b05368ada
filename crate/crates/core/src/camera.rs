//! Pinhole cameras with world-to-camera poses, the invertible warp between
//! world points and `(x, y, depth)` triples, and panning trajectories.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BitMask, DepthMap};
use crate::math::{Mat3, Vec3};

/// Points closer than this to the image plane cannot be projected.
pub const EPS_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn from_matrix(k: &Mat3) -> Result<Self> {
        let i = Self { fx: k[(0, 0)], fy: k[(1, 1)], cx: k[(0, 2)], cy: k[(1, 2)] };
        if !(i.fx > 0.0 && i.fy > 0.0) {
            return Err(Error::domain("focal lengths must be positive"));
        }
        Ok(i)
    }
}

/// World-to-camera rigid transform: `p_cam = rotation * p_world + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    /// Pose of a camera with the given camera-to-world rotation placed at `center`.
    pub fn from_center(cam_to_world: Mat3, center: Vec3) -> Self {
        let rotation = cam_to_world.transpose();
        Self { rotation, translation: -(rotation * center) }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_matrix(&self) -> nalgebra::Matrix4<f64> {
        let mut m = nalgebra::Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &nalgebra::Matrix4<f64>) -> Result<Self> {
        let pose =
            Self { rotation: m.fixed_view::<3, 3>(0, 0).into_owned(), translation: m.fixed_view::<3, 1>(0, 3).into_owned() };
        pose.validate(1e-5)?;
        Ok(pose)
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let r = &self.rotation;
        let orth = (r.transpose() * r - Mat3::identity()).abs().max();
        if orth > tol || (r.determinant() - 1.0).abs() > tol {
            return Err(Error::domain("pose rotation is not a proper orthonormal matrix"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub width: usize,
    pub height: usize,
}

/// Result of the forward warp: pixel coordinates and camera-space depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

impl Camera {
    pub fn center(&self) -> Vec3 {
        self.pose.center()
    }

    /// `true` when `(x, y)` lies inside the pixel-center hull, up to
    /// [`HULL_EPS`](crate::imaging::HULL_EPS).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        crate::imaging::in_hull(x, y, self.width, self.height)
    }

    pub fn with_pose(&self, pose: Pose) -> Self {
        Self { pose, ..*self }
    }
}

/// Maps a world point to pixel coordinates and depth. Coordinates outside
/// the image are returned unclipped.
pub fn project(p: &Vec3, cam: &Camera) -> Result<Projection> {
    let pc = cam.pose.apply(p);
    let d = pc.z;
    if !(d > EPS_DEPTH) {
        return Err(Error::BehindCamera { depth: d });
    }
    let k = &cam.intrinsics;
    Ok(Projection { x: k.fx * pc.x / d + k.cx, y: k.fy * pc.y / d + k.cy, depth: d })
}

/// Inverse of [`project`].
pub fn unproject(x: f64, y: f64, d: f64, cam: &Camera) -> Result<Vec3> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::domain("unproject needs a positive finite depth"));
    }
    let k = &cam.intrinsics;
    let pc = Vec3::new((x - k.cx) * d / k.fx, (y - k.cy) * d / k.fy, d);
    Ok(cam.pose.rotation.transpose() * (pc - cam.pose.translation))
}

/// Per-pixel destination coordinates of a depth map warped into another camera.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpField {
    pub width: usize,
    pub height: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub depth: Vec<f64>,
    pub valid: BitMask,
}

/// Warps every valid pixel of `depth` (seen from `src`) into `dst`.
pub fn reproject_depthmap(depth: &DepthMap, src: &Camera, dst: &Camera) -> WarpField {
    let (w, h) = depth.dims();
    let n = w * h;
    let mut field = WarpField {
        width: w,
        height: h,
        x: alloc::vec![f64::NAN; n],
        y: alloc::vec![f64::NAN; n],
        depth: alloc::vec![f64::NAN; n],
        valid: BitMask::new(w, h, false),
    };
    for py in 0..h {
        for px in 0..w {
            let i = py * w + px;
            let d = depth.data[i];
            let Ok(world) = unproject(px as f64, py as f64, d, src) else {
                continue;
            };
            let Ok(p) = project(&world, dst) else {
                continue;
            };
            field.x[i] = p.x;
            field.y[i] = p.y;
            field.depth[i] = p.depth;
            field.valid.data[i] = dst.contains(p.x, p.y);
        }
    }
    field
}

/// Lateral panning trajectory starting at a recorded pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub start_pose: Pose,
    /// Unit shift direction in world coordinates.
    pub direction: Vec3,
    /// Maximum shift in meters, reached at the last frame.
    pub shift_length: f64,
    pub frame_count: usize,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if (self.direction.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::domain("trajectory direction must be a unit vector"));
        }
        if self.frame_count < 1 || !(self.shift_length >= 0.0) {
            return Err(Error::domain("trajectory needs F >= 1 and s >= 0"));
        }
        Ok(())
    }
}

/// Returns `F + 1` poses sharing the start rotation whose camera centers
/// move linearly by `(i / F) * s * v`. The shift is applied to the camera
/// center, so the world-to-camera translation changes by `-R0 * offset`.
pub fn sample_panning_trajectory(spec: &TrajectorySpec) -> Result<Vec<Pose>> {
    spec.validate()?;
    let r0 = spec.start_pose.rotation;
    let t0 = spec.start_pose.translation;
    let f = spec.frame_count as f64;
    Ok((0..=spec.frame_count)
        .map(|i| {
            if i == 0 {
                return spec.start_pose;
            }
            let offset = spec.direction * (i as f64 / f * spec.shift_length);
            Pose { rotation: r0, translation: t0 - r0 * offset }
        })
        .collect())
}

/// Index of the recorded camera to warp from. A camera that shares a
/// recorded camera's rotation exactly and sits on that camera's lateral
/// axis is a panning-trajectory member and maps to its start frame;
/// otherwise the nearest camera center wins, ties to the lower index.
pub fn closest_recorded_view(novel: &Camera, recorded: &[Camera]) -> Result<usize> {
    if recorded.is_empty() {
        return Err(Error::domain("no recorded cameras to choose from"));
    }
    let c = novel.center();
    for (i, rec) in recorded.iter().enumerate() {
        if rec.pose.rotation != novel.pose.rotation {
            continue;
        }
        let offset = c - rec.center();
        let lateral = rec.pose.rotation.row(0).transpose();
        let off_axis = offset - lateral * lateral.dot(&offset);
        if off_axis.norm() <= 1e-9 * (1.0 + offset.norm()) {
            return Ok(i);
        }
    }
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, rec) in recorded.iter().enumerate() {
        let d = (rec.center() - c).norm();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::yaw_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam(pose: Pose) -> Camera {
        Camera { intrinsics: Intrinsics { fx: 50.0, fy: 52.0, cx: 23.5, cy: 15.5 }, pose, width: 48, height: 32 }
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = nalgebra::Unit::new_normalize(Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        let rot = nalgebra::Rotation3::from_axis_angle(&axis, rng.random_range(-0.5..0.5));
        Pose {
            rotation: *rot.matrix(),
            translation: Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
        }
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let c = cam(Pose::identity());
        let p = project(&Vec3::new(0.0, 0.0, 5.0), &c).unwrap();
        assert_eq!((p.x, p.y, p.depth), (23.5, 15.5, 5.0));
        let w = unproject(23.5, 15.5, 5.0, &c).unwrap();
        assert!((w - Vec3::new(0.0, 0.0, 5.0)).norm() < 1e-12);
    }

    #[test]
    fn projection_matches_homogeneous_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let c = cam(random_pose(&mut rng));
            let p = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(4.0..9.0));
            let Ok(proj) = project(&p, &c) else { continue };
            let e = c.pose.to_matrix();
            let ph = e * nalgebra::Vector4::new(p.x, p.y, p.z, 1.0);
            let k = c.intrinsics.matrix();
            let s = k * Vec3::new(ph.x, ph.y, ph.z);
            assert!((s.x / s.z - proj.x).abs() < 1e-9);
            assert!((s.y / s.z - proj.y).abs() < 1e-9);
            assert!((ph.z - proj.depth).abs() < 1e-12);
        }
    }

    #[test]
    fn behind_camera_and_bad_depth_errors() {
        let c = cam(Pose::identity());
        assert!(matches!(project(&Vec3::new(0.0, 0.0, -1.0), &c), Err(Error::BehindCamera { .. })));
        assert!(unproject(1.0, 1.0, 0.0, &c).is_err());
        assert!(unproject(1.0, 1.0, f64::INFINITY, &c).is_err());
    }

    #[test]
    fn identity_reprojection() {
        let c = cam(Pose::identity());
        let mut d = DepthMap::filled(48, 32, 4.0);
        d.data[5] = f64::INFINITY;
        let f = reproject_depthmap(&d, &c, &c);
        for y in 0..32 {
            for x in 0..48 {
                let i = y * 48 + x;
                if i == 5 {
                    assert!(!f.valid.data[i]);
                    continue;
                }
                assert!(f.valid.data[i]);
                assert!((f.x[i] - x as f64).abs() < 1e-9 && (f.y[i] - y as f64).abs() < 1e-9);
                assert!((f.depth[i] - 4.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn lateral_parallax_is_uniform() {
        let src = cam(Pose::identity());
        let delta = 0.3;
        let dst = cam(Pose::from_center(Mat3::identity(), Vec3::new(delta, 0.0, 0.0)));
        let d0 = 6.0;
        let f = reproject_depthmap(&DepthMap::filled(48, 32, d0), &src, &dst);
        let shift = 50.0 * delta / d0;
        for y in 0..32 {
            for x in 0..48 {
                let i = y * 48 + x;
                assert!((x as f64 - f.x[i] - shift).abs() < 1e-9);
                assert!((f.y[i] - y as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn panning_trajectory_shape() {
        let start = Pose::from_center(yaw_matrix(0.3), Vec3::new(1.0, -1.5, 4.0));
        let v = Vec3::new(1.0, 2.0, -0.5).normalize();
        let spec = TrajectorySpec { start_pose: start, direction: v, shift_length: 6.0, frame_count: 8 };
        let poses = sample_panning_trajectory(&spec).unwrap();
        assert_eq!(poses.len(), 9);
        assert_eq!(poses[0], start);
        assert!((poses[8].center() - start.center() - v * 6.0).norm() < 1e-12);
        assert!((poses[4].center() - start.center() - v * 3.0).norm() < 1e-12);
        for (i, p) in poses.iter().enumerate() {
            assert_eq!(p.rotation, start.rotation);
            let off = p.center() - start.center();
            assert!(off.cross(&v).norm() < 1e-12);
            if i > 0 {
                let step = p.center() - poses[i - 1].center();
                assert!((step - v * 0.75).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn closest_view_rules() {
        let recs: Vec<Camera> =
            (0..3).map(|i| cam(Pose::from_center(Mat3::identity(), Vec3::new(0.0, 0.0, 2.0 * i as f64)))).collect();
        assert_eq!(closest_recorded_view(&recs[2], &recs).unwrap(), 2);
        let near_middle = cam(Pose::from_center(yaw_matrix(0.1), Vec3::new(0.0, 0.1, 2.2)));
        assert_eq!(closest_recorded_view(&near_middle, &recs).unwrap(), 1);
        // A panning member far to the side still maps to its start frame.
        let spec =
            TrajectorySpec { start_pose: recs[0].pose, direction: Vec3::new(1.0, 0.0, 0.0), shift_length: 5.0, frame_count: 4 };
        let last = sample_panning_trajectory(&spec).unwrap()[4];
        assert_eq!(closest_recorded_view(&recs[0].with_pose(last), &recs).unwrap(), 0);
        assert!(closest_recorded_view(&recs[0], &[]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn project_unproject_round_trip(
            x in -3.0f64..3.0, y in -2.0f64..2.0, z in 1.0f64..40.0, seed in 0u64..1000
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = cam(random_pose(&mut rng));
            let world = c.pose.rotation.transpose() * (Vec3::new(x, y, z) - c.pose.translation);
            let p = project(&world, &c).unwrap();
            let back = unproject(p.x, p.y, p.depth, &c).unwrap();
            proptest::prop_assert!((back - world).norm() <= 1e-9 * (1.0 + world.norm()));
        }
    }
}
