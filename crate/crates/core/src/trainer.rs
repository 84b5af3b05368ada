//! Iterative refinement: warm-up reconstruction on recorded views, then
//! periodic restoration of novel panning trajectories into a buffer that
//! supervises the scene alongside the recorded views.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::camera::{closest_recorded_view, sample_panning_trajectory, Camera, TrajectorySpec};
use crate::error::{Error, Result};
use crate::imaging::{BitMask, ImageRgb};
use crate::math::{self, Vec3};
use crate::par;
use crate::raster::{to_scene_gradients, RasterSettings, Rasterization, RenderOutput};
use crate::restorer::{RestorationRequest, Restorer, DEFAULT_STRENGTH};
use crate::scene::{init_from_points, prune, Gaussian, ParamGradients, SceneModel, SeedPoint, PARAMS_PER_PRIMITIVE};
use crate::supervision::{
    accumulate_lidar, build_pseudo_image, depth_loss, merge_auxiliary, photometric_loss, photometric_loss_masked,
    unreliability_mask, LidarFrame, SparseDepthImage, UnreliabilityMask, DEFAULT_LAMBDA, DEFAULT_TAU, LIDAR_WINDOW,
};
use crate::synthworld::{Dataset, FRONT};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Render alpha below which a restorer input pixel counts as a hole.
const HOLE_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self { position: 2e-3, rotation: 5e-3, log_scale: 5e-3, opacity: 2e-2, color: 1e-2 }
    }
}

impl LearningRates {
    pub const ZERO: Self = Self { position: 0.0, rotation: 0.0, log_scale: 0.0, opacity: 0.0, color: 0.0 };

    /// Rate for each slot of a packed primitive.
    fn per_slot(&self) -> [f64; PARAMS_PER_PRIMITIVE] {
        let mut out = [0.0; PARAMS_PER_PRIMITIVE];
        out[0..3].fill(self.position);
        out[3..7].fill(self.rotation);
        out[7..10].fill(self.log_scale);
        out[10] = self.opacity;
        out[11..14].fill(self.color);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Total steps `T`.
    pub total_steps: usize,
    /// Warm-up steps `T0` before novel supervision starts.
    pub warmup_steps: usize,
    /// Buffer refresh interval `K`.
    pub refresh_interval: usize,
    pub tau: f64,
    pub strength: f64,
    pub lambda: f64,
    /// `(s_min, s_max)` in meters.
    pub shift_schedule: [f64; 2],
    pub traj_stride: usize,
    pub traj_frames: usize,
    pub learning_rates: LearningRates,
    /// Zero disables pruning.
    pub prune_interval: usize,
    pub prune_floor: f64,
    /// Upper bound on every primitive scale, in meters.
    pub max_scale: f64,
    /// False gives the recon-only baseline: no refresh, no novel term.
    pub novel: bool,
    /// Weight of the whole novel term; zero disables it.
    pub novel_loss_weight: f64,
    /// LiDAR depth weight relative to the novel photometric loss.
    pub novel_depth_weight: f64,
    pub lidar_window: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 6000,
            warmup_steps: 3000,
            refresh_interval: 1000,
            tau: DEFAULT_TAU,
            strength: DEFAULT_STRENGTH,
            lambda: DEFAULT_LAMBDA,
            shift_schedule: [2.0, 6.0],
            traj_stride: 3,
            traj_frames: 4,
            learning_rates: LearningRates::default(),
            prune_interval: 1000,
            prune_floor: 0.005,
            max_scale: 3.0,
            novel: true,
            novel_loss_weight: 1.0,
            novel_depth_weight: 0.02,
            lidar_window: LIDAR_WINDOW,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(0 < self.warmup_steps && self.warmup_steps <= self.total_steps) {
            return bad("need 0 < warmup_steps <= total_steps");
        }
        if self.refresh_interval == 0 {
            return bad("refresh_interval must be >= 1");
        }
        let [lo, hi] = self.shift_schedule;
        if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
            return bad("shift schedule needs 0 <= s_min <= s_max");
        }
        if !(-1.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [-1, 1]");
        }
        if !(0.0..=1.0).contains(&self.strength) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("strength and lambda must lie in [0, 1]");
        }
        if self.traj_stride == 0 || self.traj_frames == 0 {
            return bad("traj_stride and traj_frames must be >= 1");
        }
        let lr = &self.learning_rates;
        if [lr.position, lr.rotation, lr.log_scale, lr.opacity, lr.color].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("learning rates must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.prune_floor) || !(self.max_scale > 0.0) {
            return bad("prune_floor must lie in [0, 1) and max_scale be positive");
        }
        if !(self.novel_loss_weight >= 0.0) || !(self.novel_depth_weight >= 0.0) {
            return bad("novel loss weights must be non-negative");
        }
        Ok(())
    }

    /// Whether the buffer is refreshed before step `t`.
    pub fn is_refresh_step(&self, t: usize) -> bool {
        self.novel && t >= self.warmup_steps && (t - self.warmup_steps).is_multiple_of(self.refresh_interval)
    }

    /// Refresh steps of a full run.
    pub fn refresh_schedule(&self) -> Vec<usize> {
        if !self.novel {
            return Vec::new();
        }
        (self.warmup_steps..self.total_steps).step_by(self.refresh_interval).collect()
    }
}

/// Linear ramp from `s_min` at `T0` to `s_max` at `T`, clamped.
pub fn shift_length_at(t: usize, cfg: &TrainConfig) -> Result<f64> {
    if t < cfg.warmup_steps {
        return Err(Error::domain(format!("shift length requested at step {t} before warm-up ends")));
    }
    let [lo, hi] = cfg.shift_schedule;
    if cfg.total_steps == cfg.warmup_steps {
        return Ok(hi);
    }
    let u = ((t - cfg.warmup_steps) as f64 / (cfg.total_steps - cfg.warmup_steps) as f64).min(1.0);
    Ok(lo + (hi - lo) * u)
}

/// One panning trajectory per front-view start frame at the configured
/// stride. Even trajectory indices pan left, odd ones right.
pub fn sample_novel_trajectories(dataset: &Dataset, t: usize, cfg: &TrainConfig) -> Result<Vec<TrajectorySpec>> {
    let s = shift_length_at(t, cfg)?;
    Ok((0..dataset.frame_count())
        .step_by(cfg.traj_stride)
        .enumerate()
        .map(|(k, f)| {
            let pose = dataset.cameras[f][FRONT].pose;
            let lateral: Vec3 = pose.rotation.row(0).transpose();
            let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
            TrajectorySpec { start_pose: pose, direction: lateral * sign, shift_length: s, frame_count: cfg.traj_frames }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    /// Start frame and scene time of the trajectory.
    pub frame: usize,
    pub cameras: Vec<Camera>,
    pub frames: Vec<ImageRgb>,
    pub masks: Vec<UnreliabilityMask>,
    pub lidar: Vec<SparseDepthImage>,
    /// Pixels entering the novel photometric loss.
    pub supervised: Vec<BitMask>,
    pub created_at: usize,
}

impl BufferEntry {
    pub fn masked_fraction(&self) -> f64 {
        self.masks.iter().map(|m| m.mask.fraction()).sum::<f64>() / self.masks.len().max(1) as f64
    }
}

/// Restored novel videos keyed by trajectory index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefinedVideoBuffer {
    pub entries: BTreeMap<usize, BufferEntry>,
}

impl RefinedVideoBuffer {
    pub fn view_count(&self) -> usize {
        self.entries.values().map(|e| e.frames.len()).sum()
    }

    /// The `i`-th buffered view in trajectory-major order.
    pub fn view(&self, mut i: usize) -> Option<(&BufferEntry, usize)> {
        for e in self.entries.values() {
            if i < e.frames.len() {
                return Some((e, i));
            }
            i -= e.frames.len();
        }
        None
    }

    /// Mean over entries of the per-entry masked fraction.
    pub fn masked_fraction(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.values().map(BufferEntry::masked_fraction).sum::<f64>() / self.entries.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefreshStats {
    pub step: usize,
    pub shift_length: f64,
    pub trajectories: usize,
    pub masked_fraction: f64,
    pub hole_fraction: f64,
}

/// Model renders of every training frame's rig, used as warp depth.
struct SourceViews {
    frames: Vec<usize>,
    front_cams: Vec<Camera>,
    renders: Vec<Vec<RenderOutput>>,
}

fn render_sources(scene: &SceneModel, dataset: &Dataset, settings: RasterSettings) -> Result<SourceViews> {
    let frames = dataset.training_frames();
    let renders = par::map_collect(frames.len(), |i| {
        let f = frames[i];
        dataset.cameras[f].iter().map(|c| Ok(Rasterization::new(scene, c, f, settings)?.render())).collect::<Result<Vec<_>>>()
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let front_cams = frames.iter().map(|&f| dataset.cameras[f][FRONT]).collect();
    Ok(SourceViews { frames, front_cams, renders })
}

/// Intermediate products of one novel view before restoration.
#[derive(Debug, Clone, PartialEq)]
pub struct NovelView {
    pub render: ImageRgb,
    /// Merged warped pseudo image.
    pub pseudo: ImageRgb,
    /// Restorer input: the render with warped content in masked low-alpha pixels.
    pub input: ImageRgb,
    pub mask: UnreliabilityMask,
    pub lidar: SparseDepthImage,
}

fn prepare_view(
    scene: &SceneModel,
    dataset: &Dataset,
    sources: &SourceViews,
    lidar: &[LidarFrame],
    cam: &Camera,
    frame: usize,
    cfg: &TrainConfig,
) -> Result<NovelView> {
    let settings = RasterSettings::default();
    let render = Rasterization::new(scene, cam, frame, settings)?.render();
    let k = closest_recorded_view(cam, &sources.front_cams)?;
    let sf = sources.frames[k];
    let warp = |c: usize| {
        build_pseudo_image(&render, cam, &dataset.images[sf][c], &sources.renders[k][c].depth, &dataset.cameras[sf][c])
    };
    let primary = warp(FRONT)?;
    let aux = (0..dataset.cameras[sf].len()).filter(|&c| c != FRONT).map(warp).collect::<Result<Vec<_>>>()?;
    let (pseudo, hole) = merge_auxiliary(primary, &aux)?;
    let mask = unreliability_mask(&render.color, &pseudo, &hole, cfg.tau)?;
    let mut input = render.color.clone();
    for i in 0..input.pixel_count() {
        if mask.mask.data[i] && !hole.data[i] && render.alpha.data[i] < HOLE_ALPHA {
            input.data[3 * i..3 * i + 3].copy_from_slice(&pseudo.data[3 * i..3 * i + 3]);
        }
    }
    let lidar = accumulate_lidar(lidar, &dataset.node_poses, frame, cam, cfg.lidar_window)?;
    Ok(NovelView { render: render.color, pseudo, input, mask, lidar })
}

/// Runs the refresh pipeline for a single camera at scene time `frame`.
pub fn inspect_view(scene: &SceneModel, dataset: &Dataset, cam: &Camera, frame: usize, cfg: &TrainConfig) -> Result<NovelView> {
    let sources = render_sources(scene, dataset, RasterSettings::default())?;
    let lidar: Vec<LidarFrame> = dataset.lidar.iter().filter(|l| !dataset.is_holdout(l.frame)).cloned().collect();
    prepare_view(scene, dataset, &sources, &lidar, cam, frame, cfg)
}

/// Renders, warps, masks and restores every sampled trajectory against the
/// current scene. On error the buffer keeps its previous contents.
pub fn refresh_buffer(
    scene: &SceneModel,
    dataset: &Dataset,
    restorer: &dyn Restorer,
    buffer: &mut RefinedVideoBuffer,
    t: usize,
    cfg: &TrainConfig,
) -> Result<RefreshStats> {
    if t < cfg.warmup_steps || !(t - cfg.warmup_steps).is_multiple_of(cfg.refresh_interval) {
        return Err(Error::domain(format!("step {t} is not a refresh step")));
    }
    let specs = sample_novel_trajectories(dataset, t, cfg)?;
    let sources = render_sources(scene, dataset, RasterSettings::default())?;
    let lidar: Vec<LidarFrame> = dataset.lidar.iter().filter(|l| !dataset.is_holdout(l.frame)).cloned().collect();
    let entries = par::map_collect(specs.len(), |j| -> Result<BufferEntry> {
        let spec = &specs[j];
        let frame = j * cfg.traj_stride;
        let template = dataset.cameras[frame][FRONT];
        // The start pose duplicates a recorded view and is skipped.
        let cameras: Vec<Camera> = sample_panning_trajectory(spec)?.into_iter().skip(1).map(|p| template.with_pose(p)).collect();
        let views = cameras
            .iter()
            .map(|c| prepare_view(scene, dataset, &sources, &lidar, c, frame, cfg))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Restorer { trajectory: j, reason: format!("{e}") })?;
        let mut frames = Vec::new();
        let mut masks = Vec::new();
        let mut conds = Vec::new();
        for v in views {
            frames.push(v.input);
            masks.push(v.mask);
            conds.push(v.lidar);
        }
        let req = RestorationRequest {
            trajectory: j,
            frame,
            cameras: cameras.clone(),
            frames,
            masks,
            lidar_condition: conds,
            strength: cfg.strength,
            seed: mix_seed(cfg.seed, t as u64, j as u64),
        };
        let restored = restorer.restore(&req).map_err(|e| match e {
            Error::Restorer { .. } => e,
            other => Error::Restorer { trajectory: j, reason: format!("{other}") },
        })?;
        if restored.len() != req.frames.len() {
            return Err(Error::Restorer { trajectory: j, reason: "restorer returned the wrong frame count".into() });
        }
        let supervised = req
            .masks
            .iter()
            .map(|m| {
                let mut s = m.mask.clone();
                for v in &mut s.data {
                    *v = restorer.fills_masked() || !*v;
                }
                s
            })
            .collect();
        Ok(BufferEntry {
            frame,
            cameras,
            frames: restored,
            masks: req.masks,
            lidar: req.lidar_condition,
            supervised,
            created_at: t,
        })
    });
    let mut fresh = BTreeMap::new();
    for (j, e) in entries.into_iter().enumerate() {
        fresh.insert(j, e?);
    }
    buffer.entries = fresh;
    let views: Vec<&UnreliabilityMask> = buffer.entries.values().flat_map(|e| e.masks.iter()).collect();
    let hole_fraction = views.iter().map(|m| m.hole.fraction()).sum::<f64>() / views.len().max(1) as f64;
    Ok(RefreshStats {
        step: t,
        shift_length: shift_length_at(t, cfg)?,
        trajectories: buffer.entries.len(),
        masked_fraction: buffer.masked_fraction(),
        hole_fraction,
    })
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 31;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^ (x >> 29)
}

/// Adam moments over the packed parameter vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: usize) -> Self {
        Self { m: alloc::vec![0.0; params], v: alloc::vec![0.0; params], step: 0 }
    }

    /// Drops the moments of primitives whose `keep` flag is false.
    pub fn retain(&mut self, keep: &[bool]) {
        let filter = |x: &[f64]| -> Vec<f64> {
            x.chunks_exact(PARAMS_PER_PRIMITIVE).zip(keep).filter(|(_, k)| **k).flat_map(|(c, _)| c.iter().copied()).collect()
        };
        self.m = filter(&self.m);
        self.v = filter(&self.v);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    /// Recorded view as `(frame, camera index)`.
    pub view: (usize, usize),
    pub recorded_loss: f64,
    /// Weighted novel photometric and depth terms, absent during warm-up.
    pub novel_loss: Option<f64>,
    pub novel_depth_loss: Option<f64>,
    pub primitives: usize,
    pub pruned: usize,
}

/// Recorded views in round-robin order: training frames, each rig camera.
pub fn recorded_views(dataset: &Dataset) -> Vec<(usize, usize)> {
    dataset.training_frames().into_iter().flat_map(|f| (0..dataset.cameras[f].len()).map(move |c| (f, c))).collect()
}

/// One optimization step at iteration `t`.
pub fn train_step(
    scene: &mut SceneModel,
    dataset: &Dataset,
    buffer: &RefinedVideoBuffer,
    opt: &mut OptimizerState,
    t: usize,
    cfg: &TrainConfig,
) -> Result<StepReport> {
    let settings = RasterSettings::default();
    let views = recorded_views(dataset);
    if views.is_empty() {
        return Err(Error::domain("dataset has no training views"));
    }
    let (f, c) = views[t % views.len()];
    let ras = Rasterization::new(scene, &dataset.cameras[f][c], f, settings)?;
    let out = ras.render();
    let (recorded_loss, grad) = photometric_loss(&out.color, &dataset.images[f][c], cfg.lambda)?;
    let mut grads = to_scene_gradients(scene, f, ras.backward_world(&grad, None)?)?;

    let mut novel_loss = None;
    let mut novel_depth_loss = None;
    let novel_active = cfg.novel && t >= cfg.warmup_steps && buffer.view_count() > 0;
    if novel_active && cfg.novel_loss_weight > 0.0 {
        let k = (t - cfg.warmup_steps) % buffer.view_count();
        let (entry, j) = buffer.view(k).expect("index below view count");
        let ras = Rasterization::new(scene, &entry.cameras[j], entry.frame, settings)?;
        let out = ras.render();
        let (pl, mut gc) = photometric_loss_masked(&out.color, &entry.frames[j], cfg.lambda, Some(&entry.supervised[j]))?;
        gc.iter_mut().for_each(|g| *g *= cfg.novel_loss_weight);
        let (dl, mut gd) = depth_loss(&out.depth, &entry.lidar[j])?;
        let wd = cfg.novel_loss_weight * cfg.novel_depth_weight;
        gd.iter_mut().for_each(|g| *g *= wd);
        let ng = to_scene_gradients(scene, entry.frame, ras.backward_world(&gc, Some(&gd))?)?;
        grads.add_scaled(&ng, 1.0);
        novel_loss = Some(cfg.novel_loss_weight * pl);
        novel_depth_loss = Some(wd * dl);
    } else if novel_active {
        novel_loss = Some(0.0);
        novel_depth_loss = Some(0.0);
    }

    let total = recorded_loss + novel_loss.unwrap_or(0.0) + novel_depth_loss.unwrap_or(0.0);
    if !total.is_finite() || !grads.all_finite() {
        return Err(Error::Numeric(format!("non-finite loss or gradient at step {t}, view ({f}, {c}), loss {total}")));
    }
    adam_update(scene, opt, &grads, cfg)?;

    let mut pruned = 0;
    if cfg.prune_interval > 0 && (t + 1).is_multiple_of(cfg.prune_interval) && t + 1 < cfg.total_steps {
        let (kept, keep) = prune(scene, cfg.prune_floor)?;
        pruned = scene.primitive_count() - kept.primitive_count();
        if pruned > 0 {
            *scene = kept;
            opt.retain(&keep);
        }
    }
    Ok(StepReport {
        step: t,
        view: (f, c),
        recorded_loss,
        novel_loss,
        novel_depth_loss,
        primitives: scene.primitive_count(),
        pruned,
    })
}

fn adam_update(scene: &mut SceneModel, opt: &mut OptimizerState, grads: &ParamGradients, cfg: &TrainConfig) -> Result<()> {
    let mut params = scene.pack();
    let g = grads.pack();
    if g.len() != params.len() || opt.m.len() != params.len() || opt.v.len() != params.len() {
        return Err(Error::domain("optimizer state does not match the scene"));
    }
    opt.step += 1;
    let bc1 = 1.0 - libm::pow(ADAM_BETA1, opt.step as f64);
    let bc2 = 1.0 - libm::pow(ADAM_BETA2, opt.step as f64);
    let rates = cfg.learning_rates.per_slot();
    let hi = math::ln(cfg.max_scale);
    for (k, prim) in scene.primitives_mut().enumerate() {
        let base = k * PARAMS_PER_PRIMITIVE;
        let p = &mut params[base..base + PARAMS_PER_PRIMITIVE];
        let mut moved = false;
        for (s, lr) in rates.iter().enumerate() {
            let i = base + s;
            opt.m[i] = ADAM_BETA1 * opt.m[i] + (1.0 - ADAM_BETA1) * g[i];
            opt.v[i] = ADAM_BETA2 * opt.v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            if *lr == 0.0 {
                continue;
            }
            let step = lr * (opt.m[i] / bc1) / (math::sqrt(opt.v[i] / bc2) + ADAM_EPS);
            if step != 0.0 {
                p[s] -= step;
                moved = true;
            }
        }
        if moved {
            let mut next = Gaussian::unpack(p);
            next.sanitize();
            for s in next.log_scale.iter_mut() {
                *s = s.min(hi);
            }
            *prim = next;
        }
    }
    Ok(())
}

/// Everything `optimize` reports besides the scene.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: Vec<StepReport>,
    pub refreshes: Vec<RefreshStats>,
}

impl TrainingLog {
    pub fn refresh_steps(&self) -> Vec<usize> {
        self.refreshes.iter().map(|r| r.step).collect()
    }
}

/// Runs `T` steps, refreshing the buffer on the schedule.
pub fn optimize(
    scene: SceneModel,
    dataset: &Dataset,
    restorer: &dyn Restorer,
    cfg: &TrainConfig,
) -> Result<(SceneModel, TrainingLog)> {
    optimize_with(scene, dataset, restorer, cfg, |_| {})
}

/// [`optimize`] with a callback after every step.
pub fn optimize_with<F: FnMut(&StepReport)>(
    mut scene: SceneModel,
    dataset: &Dataset,
    restorer: &dyn Restorer,
    cfg: &TrainConfig,
    mut on_step: F,
) -> Result<(SceneModel, TrainingLog)> {
    cfg.validate()?;
    dataset.validate()?;
    let mut opt = OptimizerState::new(scene.primitive_count() * PARAMS_PER_PRIMITIVE);
    let mut buffer = RefinedVideoBuffer::default();
    let mut log = TrainingLog::default();
    for t in 0..cfg.total_steps {
        if cfg.is_refresh_step(t) {
            log.refreshes.push(refresh_buffer(&scene, dataset, restorer, &mut buffer, t, cfg)?);
        }
        let r = train_step(&mut scene, dataset, &buffer, &mut opt, t, cfg)?;
        on_step(&r);
        log.steps.push(r);
    }
    Ok((scene, log))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    /// Edge of the downsampling voxel in meters.
    pub voxel: f64,
    pub scale: f64,
    pub opacity: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { voxel: 0.5, scale: 0.25, opacity: 0.5 }
    }
}

/// Position sum, color sum and point count of one voxel.
type VoxelSum = (Vec3, [f64; 3], usize);

/// Scene seeded from the LiDAR of the training frames: node points move
/// into their node's local frame, then one averaged point per voxel.
pub fn init_from_lidar(dataset: &Dataset, init: &InitConfig, background: [f64; 3]) -> Result<SceneModel> {
    if !(init.voxel > 0.0) {
        return Err(Error::Config("voxel size must be positive".into()));
    }
    let mut cells: BTreeMap<(Option<u32>, [i64; 3]), VoxelSum> = BTreeMap::new();
    for lf in dataset.lidar.iter().filter(|l| !dataset.is_holdout(l.frame)) {
        for pt in &lf.points {
            let p = match pt.node_id {
                None => pt.position,
                Some(id) => {
                    let pose = dataset
                        .node_poses
                        .get(&id)
                        .and_then(|m| m.get(&lf.frame))
                        .ok_or(Error::MissingNodePose { node_id: id, frame: lf.frame })?;
                    pose.inverse_apply(&pt.position)
                }
            };
            let key = [p.x, p.y, p.z].map(|v| math::floor(v / init.voxel) as i64);
            let cell = cells.entry((pt.node_id, key)).or_insert((Vec3::zeros(), [0.0; 3], 0));
            cell.0 += p;
            for k in 0..3 {
                cell.1[k] += pt.color[k];
            }
            cell.2 += 1;
        }
    }
    let seeds: Vec<SeedPoint> = cells
        .into_iter()
        .map(|((node_id, _), (p, c, n))| {
            let inv = 1.0 / n as f64;
            SeedPoint { position: p * inv, color: c.map(|v| v * inv), node_id }
        })
        .collect();
    init_from_points(&seeds, init.scale, init.opacity, &dataset.node_poses, background)
}
