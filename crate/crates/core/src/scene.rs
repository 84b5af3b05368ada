//! The optimizable scene: static Gaussians in world space plus rigid nodes
//! whose Gaussians live in a local frame moved by per-frame poses.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Quat, Vec3, QUAT_IDENTITY};

/// Scalars per primitive in the packed parameter vector:
/// position 3, rotation 4, log-scale 3, opacity logit 1, color 3.
pub const PARAMS_PER_PRIMITIVE: usize = 14;

pub const MIN_SCALE: f64 = 1e-6;
pub const MAX_SCALE: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub position: Vec3,
    /// `[w, x, y, z]`, unit norm after every optimizer step.
    pub rotation: Quat,
    /// Per-axis log standard deviation.
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

impl Gaussian {
    pub fn opacity(&self) -> f64 {
        math::sigmoid(self.opacity_logit)
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        math::quat_to_matrix(&self.rotation)
    }

    /// Renormalizes the quaternion and clamps scales into `[MIN_SCALE, MAX_SCALE]`.
    pub fn sanitize(&mut self) {
        self.rotation = math::quat_normalize(&self.rotation);
        let (lo, hi) = (math::ln(MIN_SCALE), math::ln(MAX_SCALE));
        for s in self.log_scale.iter_mut() {
            *s = s.clamp(lo, hi);
        }
        for c in &mut self.color {
            *c = c.clamp(0.0, 1.0);
        }
    }

    pub fn pack_into(&self, out: &mut [f64]) {
        out[0..3].copy_from_slice(self.position.as_slice());
        out[3..7].copy_from_slice(&self.rotation);
        out[7..10].copy_from_slice(self.log_scale.as_slice());
        out[10] = self.opacity_logit;
        out[11..14].copy_from_slice(&self.color);
    }

    pub fn unpack(p: &[f64]) -> Self {
        Self {
            position: Vec3::new(p[0], p[1], p[2]),
            rotation: [p[3], p[4], p[5], p[6]],
            log_scale: Vec3::new(p[7], p[8], p[9]),
            opacity_logit: p[10],
            color: [p[11], p[12], p[13]],
        }
    }
}

/// `Σ = R(q) diag(exp(2 log_scale)) R(q)^T`.
pub fn covariance_of(g: &Gaussian) -> Mat3 {
    let r = g.rotation_matrix();
    let s2 = Vec3::new(math::exp(2.0 * g.log_scale.x), math::exp(2.0 * g.log_scale.y), math::exp(2.0 * g.log_scale.z));
    r * Mat3::from_diagonal(&s2) * r.transpose()
}

/// Local-to-world rigid transform of a node at one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Quat,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: QUAT_IDENTITY, translation: Vec3::zeros() }
    }

    pub fn translation(t: Vec3) -> Self {
        Self { rotation: QUAT_IDENTITY, translation: t }
    }

    pub fn matrix(&self) -> Mat3 {
        math::quat_to_matrix(&self.rotation)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.matrix() * p + self.translation
    }

    pub fn inverse_apply(&self, p: &Vec3) -> Vec3 {
        self.matrix().transpose() * (p - self.translation)
    }

    pub fn to_matrix4(&self) -> nalgebra::Matrix4<f64> {
        let mut m = nalgebra::Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix4(m: &nalgebra::Matrix4<f64>) -> Self {
        let r: Mat3 = m.fixed_view::<3, 3>(0, 0).into_owned();
        Self { rotation: math::matrix_to_quat(&r), translation: m.fixed_view::<3, 1>(0, 3).into_owned() }
    }

    /// Rigidly moves a primitive from the node frame into the world.
    pub fn transform_gaussian(&self, g: &Gaussian) -> Gaussian {
        Gaussian { position: self.apply(&g.position), rotation: math::quat_mul(&self.rotation, &g.rotation), ..*g }
    }
}

pub type NodePoses = BTreeMap<usize, RigidTransform>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidNode {
    pub node_id: u32,
    pub gaussians: Vec<Gaussian>,
    pub frame_poses: NodePoses,
}

impl RigidNode {
    pub fn pose_at(&self, frame: usize) -> Result<&RigidTransform> {
        self.frame_poses.get(&frame).ok_or(Error::MissingNodePose { node_id: self.node_id, frame })
    }
}

/// Node id → per-frame pose, as recorded in datasets.
pub type NodePoseTable = BTreeMap<u32, NodePoses>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneModel {
    pub statics: Vec<Gaussian>,
    /// Kept sorted by `node_id`.
    pub nodes: Vec<RigidNode>,
    pub background: [f64; 3],
}

/// Where a flattened primitive lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Owner {
    Static,
    Node(usize),
}

impl SceneModel {
    pub fn primitive_count(&self) -> usize {
        self.statics.len() + self.nodes.iter().map(|n| n.gaussians.len()).sum::<usize>()
    }

    /// Owner of every flattened primitive, in flattened order.
    pub fn owners(&self) -> Vec<Owner> {
        let mut out = Vec::with_capacity(self.primitive_count());
        out.extend(core::iter::repeat_n(Owner::Static, self.statics.len()));
        for (k, n) in self.nodes.iter().enumerate() {
            out.extend(core::iter::repeat_n(Owner::Node(k), n.gaussians.len()));
        }
        out
    }

    pub fn primitives(&self) -> impl Iterator<Item = &Gaussian> {
        self.statics.iter().chain(self.nodes.iter().flat_map(|n| n.gaussians.iter()))
    }

    pub fn primitives_mut(&mut self) -> impl Iterator<Item = &mut Gaussian> {
        self.statics.iter_mut().chain(self.nodes.iter_mut().flat_map(|n| n.gaussians.iter_mut()))
    }

    /// Node poses at `frame`, indexed like `self.nodes`.
    pub fn node_poses_at(&self, frame: usize) -> Result<Vec<RigidTransform>> {
        self.nodes.iter().map(|n| n.pose_at(frame).copied()).collect()
    }

    pub fn node_pose_table(&self) -> NodePoseTable {
        self.nodes.iter().map(|n| (n.node_id, n.frame_poses.clone())).collect()
    }

    pub fn pack(&self) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.primitive_count() * PARAMS_PER_PRIMITIVE];
        for (g, chunk) in self.primitives().zip(out.chunks_exact_mut(PARAMS_PER_PRIMITIVE)) {
            g.pack_into(chunk);
        }
        out
    }

    pub fn unpack(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.primitive_count() * PARAMS_PER_PRIMITIVE {
            return Err(Error::domain("parameter vector length does not match the scene"));
        }
        for (g, chunk) in self.primitives_mut().zip(params.chunks_exact(PARAMS_PER_PRIMITIVE)) {
            *g = Gaussian::unpack(chunk);
        }
        Ok(())
    }

    pub fn sanitize(&mut self) {
        self.primitives_mut().for_each(Gaussian::sanitize);
    }
}

/// Flattened world-space primitives at `frame`: statics unchanged, then
/// node primitives by node id in stored order.
pub fn world_space_primitives(scene: &SceneModel, frame: usize) -> Result<Vec<Gaussian>> {
    let mut out = Vec::with_capacity(scene.primitive_count());
    out.extend_from_slice(&scene.statics);
    for node in &scene.nodes {
        let pose = node.pose_at(frame)?;
        out.extend(node.gaussians.iter().map(|g| pose.transform_gaussian(g)));
    }
    Ok(out)
}

/// Input point for [`init_from_points`]. Node points are given in the
/// node's local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedPoint {
    pub position: Vec3,
    pub color: [f64; 3],
    pub node_id: Option<u32>,
}

/// One isotropic primitive per point, routed into nodes by label.
pub fn init_from_points(
    points: &[SeedPoint],
    default_scale: f64,
    default_opacity: f64,
    node_poses: &NodePoseTable,
    background: [f64; 3],
) -> Result<SceneModel> {
    if points.is_empty() {
        return Err(Error::domain("cannot initialize a scene from zero points"));
    }
    if !(default_scale > 0.0) || !(default_opacity > 0.0 && default_opacity < 1.0) {
        return Err(Error::domain("default scale must be > 0 and opacity in (0, 1)"));
    }
    let ls = math::ln(default_scale);
    let make = |p: &SeedPoint| Gaussian {
        position: p.position,
        rotation: QUAT_IDENTITY,
        log_scale: Vec3::new(ls, ls, ls),
        opacity_logit: math::logit(default_opacity),
        color: p.color,
    };
    let mut nodes: BTreeMap<u32, RigidNode> = node_poses
        .iter()
        .map(|(id, poses)| (*id, RigidNode { node_id: *id, gaussians: Vec::new(), frame_poses: poses.clone() }))
        .collect();
    let mut statics = Vec::new();
    for p in points {
        match p.node_id {
            None => statics.push(make(p)),
            Some(id) => {
                nodes.get_mut(&id).ok_or_else(|| Error::domain("point labeled with an unknown node id"))?.gaussians.push(make(p))
            }
        }
    }
    Ok(SceneModel { statics, nodes: nodes.into_values().collect(), background })
}

/// Removes primitives whose opacity is below `floor`, keeping survivor order.
/// Returns the scene and, per original flattened index, whether it was kept.
pub fn prune(scene: &SceneModel, floor: f64) -> Result<(SceneModel, Vec<bool>)> {
    if !(0.0..1.0).contains(&floor) {
        return Err(Error::domain("opacity floor must lie in [0, 1)"));
    }
    let keep: Vec<bool> = scene.primitives().map(|g| g.opacity() >= floor).collect();
    let mut it = keep.iter();
    let mut out = scene.clone();
    out.statics.retain(|_| *it.next().unwrap());
    for n in &mut out.nodes {
        n.gaussians.retain(|_| *it.next().unwrap());
    }
    if out.primitive_count() == 0 {
        return Err(Error::EmptyScene);
    }
    Ok((out, keep))
}

/// Per-primitive gradients aligned with the flattened primitive order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub position: Vec<[f64; 3]>,
    pub rotation: Vec<[f64; 4]>,
    pub log_scale: Vec<[f64; 3]>,
    pub opacity_logit: Vec<f64>,
    pub color: Vec<[f64; 3]>,
}

impl ParamGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            position: alloc::vec![[0.0; 3]; n],
            rotation: alloc::vec![[0.0; 4]; n],
            log_scale: alloc::vec![[0.0; 3]; n],
            opacity_logit: alloc::vec![0.0; n],
            color: alloc::vec![[0.0; 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.opacity_logit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logit.is_empty()
    }

    /// Same layout as [`SceneModel::pack`].
    pub fn pack(&self) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.len() * PARAMS_PER_PRIMITIVE];
        for (i, c) in out.chunks_exact_mut(PARAMS_PER_PRIMITIVE).enumerate() {
            c[0..3].copy_from_slice(&self.position[i]);
            c[3..7].copy_from_slice(&self.rotation[i]);
            c[7..10].copy_from_slice(&self.log_scale[i]);
            c[10] = self.opacity_logit[i];
            c[11..14].copy_from_slice(&self.color[i]);
        }
        out
    }

    pub fn add_scaled(&mut self, other: &ParamGradients, s: f64) {
        fn axpy<const N: usize>(a: &mut [[f64; N]], b: &[[f64; N]], s: f64) {
            for (x, y) in a.iter_mut().zip(b) {
                for k in 0..N {
                    x[k] += s * y[k];
                }
            }
        }
        axpy(&mut self.position, &other.position, s);
        axpy(&mut self.rotation, &other.rotation, s);
        axpy(&mut self.log_scale, &other.log_scale, s);
        axpy(&mut self.color, &other.color, s);
        for (x, y) in self.opacity_logit.iter_mut().zip(&other.opacity_logit) {
            *x += s * y;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.pack().iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prim(rng: &mut ChaCha8Rng) -> Gaussian {
        Gaussian {
            position: Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(2.0..5.0)),
            rotation: math::quat_normalize(&[
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]),
            log_scale: Vec3::new(rng.random_range(-2.0..0.0), rng.random_range(-2.0..0.0), rng.random_range(-2.0..0.0)),
            opacity_logit: rng.random_range(-3.0..3.0),
            color: [rng.random(), rng.random(), rng.random()],
        }
    }

    #[test]
    fn covariance_identity() {
        let g = Gaussian {
            position: Vec3::zeros(),
            rotation: QUAT_IDENTITY,
            log_scale: Vec3::zeros(),
            opacity_logit: 0.0,
            color: [0.0; 3],
        };
        assert!((covariance_of(&g) - Mat3::identity()).abs().max() < 1e-15);
    }

    #[test]
    fn covariance_axis_permutation_under_z_rotation() {
        let h = core::f64::consts::FRAC_PI_4;
        let (sx, sy, sz) = (0.5f64, 2.0f64, 1.5f64);
        let g = Gaussian {
            position: Vec3::zeros(),
            rotation: [math::cos(h), 0.0, 0.0, math::sin(h)],
            log_scale: Vec3::new(sx.ln(), sy.ln(), sz.ln()),
            opacity_logit: 0.0,
            color: [0.0; 3],
        };
        let expected = Mat3::from_diagonal(&Vec3::new(sy * sy, sx * sx, sz * sz));
        assert!((covariance_of(&g) - expected).abs().max() < 1e-12);
    }

    #[test]
    fn covariance_eigenvalues_are_squared_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let g = prim(&mut rng);
            let cov = covariance_of(&g);
            assert!((cov - cov.transpose()).abs().max() < 1e-14);
            let mut eig: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
            let mut want: Vec<f64> = g.log_scale.iter().map(|s| (2.0 * s).exp()).collect();
            eig.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9 * (1.0 + b));
                assert!(*a > 0.0);
            }
        }
    }

    fn scene_with_node(rng: &mut ChaCha8Rng, pose: RigidTransform) -> SceneModel {
        let mut poses = NodePoses::new();
        poses.insert(0, pose);
        SceneModel {
            statics: (0..3).map(|_| prim(rng)).collect(),
            nodes: alloc::vec![RigidNode { node_id: 4, gaussians: (0..4).map(|_| prim(rng)).collect(), frame_poses: poses }],
            background: [0.0; 3],
        }
    }

    #[test]
    fn world_space_static_and_identity_node() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scene = scene_with_node(&mut rng, RigidTransform::identity());
        let w = world_space_primitives(&scene, 0).unwrap();
        assert_eq!(&w[..3], &scene.statics[..]);
        for (a, b) in w[3..].iter().zip(&scene.nodes[0].gaussians) {
            assert_eq!(a.position, b.position);
            assert_eq!(a.rotation, b.rotation);
        }
        assert!(matches!(world_space_primitives(&scene, 7), Err(Error::MissingNodePose { node_id: 4, frame: 7 })));
        let only_static = SceneModel { nodes: Vec::new(), ..scene };
        assert_eq!(world_space_primitives(&only_static, 99).unwrap(), only_static.statics);
    }

    #[test]
    fn translated_node_shifts_positions_keeps_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let scene = scene_with_node(&mut rng, RigidTransform::translation(Vec3::new(1.0, 0.0, 0.0)));
        let w = world_space_primitives(&scene, 0).unwrap();
        for (a, b) in w[3..].iter().zip(&scene.nodes[0].gaussians) {
            assert!((a.position - b.position - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
            assert!((covariance_of(a) - covariance_of(b)).abs().max() < 1e-14);
        }
    }

    #[test]
    fn rigid_node_preserves_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pose =
            RigidTransform { rotation: math::quat_normalize(&[0.6, 0.2, -0.5, 0.3]), translation: Vec3::new(3.0, -1.0, 2.0) };
        let scene = scene_with_node(&mut rng, pose);
        let w = world_space_primitives(&scene, 0).unwrap();
        let local = &scene.nodes[0].gaussians;
        for i in 0..4 {
            for j in 0..4 {
                let dl = (local[i].position - local[j].position).norm();
                let dw = (w[3 + i].position - w[3 + j].position).norm();
                assert!((dl - dw).abs() <= 1e-9 * (1.0 + dl));
            }
        }
    }

    #[test]
    fn init_single_point() {
        let pts = [SeedPoint { position: Vec3::zeros(), color: [0.1, 0.2, 0.3], node_id: None }];
        let s = init_from_points(&pts, 0.1, 0.5, &NodePoseTable::new(), [0.0; 3]).unwrap();
        assert_eq!(s.primitive_count(), 1);
        assert_eq!(s.statics[0].opacity_logit, 0.0);
        assert!((s.statics[0].log_scale.x - 0.1f64.ln()).abs() < 1e-15);
        assert!(init_from_points(&[], 0.1, 0.5, &NodePoseTable::new(), [0.0; 3]).is_err());
    }

    #[test]
    fn init_routes_labeled_points() {
        let mut table = NodePoseTable::new();
        table.insert(2, NodePoses::new());
        table.insert(5, NodePoses::new());
        let labels = [None, Some(5), Some(2), None, Some(5), None];
        let pts: Vec<SeedPoint> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| SeedPoint { position: Vec3::new(i as f64, 0.0, 0.0), color: [0.5; 3], node_id: *l })
            .collect();
        let s = init_from_points(&pts, 0.2, 0.3, &table, [0.0; 3]).unwrap();
        assert_eq!(s.statics.len(), 3);
        assert_eq!(s.nodes[0].node_id, 2);
        assert_eq!(s.nodes[0].gaussians.len(), 1);
        assert_eq!(s.nodes[1].gaussians.len(), 2);
        assert_eq!(s.nodes[1].gaussians[1].position.x, 4.0);
        let bad = [SeedPoint { position: Vec3::zeros(), color: [0.0; 3], node_id: Some(9) }];
        assert!(init_from_points(&bad, 0.2, 0.3, &table, [0.0; 3]).is_err());
    }

    #[test]
    fn prune_counts_and_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scene = scene_with_node(&mut rng, RigidTransform::identity());
        let (same, keep) = prune(&scene, 0.0).unwrap();
        assert_eq!(same, scene);
        assert!(keep.iter().all(|k| *k));

        let floor = 0.5;
        let expected_removed = scene.primitives().filter(|g| g.opacity() < floor).count();
        match prune(&scene, floor) {
            Ok((p, keep)) => {
                assert_eq!(scene.primitive_count() - p.primitive_count(), expected_removed);
                let survivors: Vec<Gaussian> = scene.primitives().zip(&keep).filter(|(_, k)| **k).map(|(g, _)| *g).collect();
                assert_eq!(p.primitives().copied().collect::<Vec<_>>(), survivors);
            }
            Err(e) => assert_eq!((e, expected_removed), (Error::EmptyScene, scene.primitive_count())),
        }

        let mut faint = scene.clone();
        faint.primitives_mut().for_each(|g| g.opacity_logit = math::logit(0.001));
        assert_eq!(prune(&faint, 0.005).unwrap_err(), Error::EmptyScene);
    }

    proptest::proptest! {
        #[test]
        fn pack_unpack_round_trip(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scene = scene_with_node(&mut rng, RigidTransform::identity());
            let mut other = scene.clone();
            other.primitives_mut().for_each(|g| g.opacity_logit += 1.0);
            other.unpack(&scene.pack()).unwrap();
            proptest::prop_assert_eq!(other, scene);
        }
    }
}
