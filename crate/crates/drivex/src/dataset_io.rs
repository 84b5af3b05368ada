//! Dataset directories: a JSON manifest plus per-view image, depth and
//! LiDAR files.

use std::path::{Path, PathBuf};

use drivex_core::camera::{Camera, Intrinsics, Pose};
use drivex_core::math::Mat3;
use drivex_core::scene::{NodePoseTable, NodePoses, RigidTransform};
use drivex_core::synthworld::{Dataset, NovelSet, WorldSpec, CAMERA_NAMES};
use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    pub name: String,
    pub width: usize,
    pub height: usize,
    /// Row-major 3x3.
    pub intrinsics: [f64; 9],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub index: usize,
    /// Row-major 4x4 world-to-camera matrices, in camera order.
    pub poses: Vec<[f64; 16]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodePoseEntry {
    pub frame: usize,
    pub pose: RigidTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub node_id: u32,
    pub poses: Vec<NodePoseEntry>,
}

/// Shifted front-camera trajectory; intrinsics are those of the first camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NovelEntry {
    pub shift: f64,
    pub frames: Vec<usize>,
    pub poses: Vec<[f64; 16]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub cameras: Vec<CameraEntry>,
    pub frames: Vec<FrameEntry>,
    pub node_poses: Vec<NodeEntry>,
    pub holdout: Vec<usize>,
    #[serde(default)]
    pub novel_gt: Vec<NovelEntry>,
    /// Generating world, needed by the oracle restorers.
    #[serde(default)]
    pub world: Option<WorldSpec>,
}

/// A dataset together with the world it was rendered from, when known.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredDataset {
    pub dataset: Dataset,
    pub world: Option<WorldSpec>,
}

fn camera_name(c: usize) -> String {
    CAMERA_NAMES.get(c).map_or_else(|| format!("cam{c}"), |n| n.to_string())
}

pub fn image_path(cam: &str, frame: usize) -> PathBuf {
    Path::new("images").join(cam).join(format!("{frame:05}.png"))
}

pub fn depth_path(cam: &str, frame: usize) -> PathBuf {
    Path::new("depth").join(cam).join(format!("{frame:05}.pfm"))
}

pub fn lidar_path(frame: usize) -> PathBuf {
    Path::new("lidar").join(format!("{frame:05}.dxpc"))
}

pub fn novel_path(shift: f64, frame: usize) -> PathBuf {
    Path::new("novel_gt").join(format!("shift_{shift}")).join(format!("{frame:05}.png"))
}

fn mat4(m: &Matrix4<f64>) -> [f64; 16] {
    core::array::from_fn(|i| m[(i / 4, i % 4)])
}

fn intrinsics_entry(k: &Intrinsics) -> [f64; 9] {
    let m = k.matrix();
    core::array::from_fn(|i| m[(i / 3, i % 3)])
}

/// Builds the manifest describing `ds`. Every frame must share the rig
/// intrinsics and image sizes of frame 0.
pub fn manifest_of(ds: &Dataset, world: Option<&WorldSpec>) -> Result<Manifest> {
    ds.validate()?;
    let rig = ds.cameras.first().ok_or_else(|| Error::Config("dataset has no frames".into()))?;
    for (f, cams) in ds.cameras.iter().enumerate() {
        let same = cams.len() == rig.len()
            && cams.iter().zip(rig).all(|(a, b)| a.intrinsics == b.intrinsics && a.width == b.width && a.height == b.height);
        if !same {
            return Err(Error::Config(format!("frame {f} does not share the rig of frame 0")));
        }
    }
    let front = rig[0];
    for set in &ds.novel_gt {
        if set.cameras.iter().any(|c| c.intrinsics != front.intrinsics || c.width != front.width || c.height != front.height) {
            return Err(Error::Config(format!("novel set at shift {} does not use the first camera's intrinsics", set.shift)));
        }
    }
    Ok(Manifest {
        schema_version: SCHEMA_VERSION,
        cameras: rig
            .iter()
            .enumerate()
            .map(|(c, cam)| CameraEntry {
                name: camera_name(c),
                width: cam.width,
                height: cam.height,
                intrinsics: intrinsics_entry(&cam.intrinsics),
            })
            .collect(),
        frames: ds
            .cameras
            .iter()
            .enumerate()
            .map(|(f, cams)| FrameEntry { index: f, poses: cams.iter().map(|c| mat4(&c.pose.to_matrix())).collect() })
            .collect(),
        node_poses: ds
            .node_poses
            .iter()
            .map(|(&node_id, poses)| NodeEntry {
                node_id,
                poses: poses.iter().map(|(&frame, &pose)| NodePoseEntry { frame, pose }).collect(),
            })
            .collect(),
        holdout: ds.holdout.clone(),
        novel_gt: ds
            .novel_gt
            .iter()
            .map(|s| NovelEntry {
                shift: s.shift,
                frames: s.frames.clone(),
                poses: s.cameras.iter().map(|c| mat4(&c.pose.to_matrix())).collect(),
            })
            .collect(),
        world: world.cloned(),
    })
}

/// Writes every file of `ds` under `dir`, the manifest last.
pub fn write_dataset(ds: &Dataset, world: Option<&WorldSpec>, dir: &Path) -> Result<()> {
    let manifest = manifest_of(ds, world)?;
    if ds.lidar.len() != ds.frame_count() || ds.lidar.iter().enumerate().any(|(f, l)| l.frame != f) {
        return Err(Error::Config("dataset needs one LiDAR frame per frame, in order".into()));
    }
    for (f, (imgs, depths)) in ds.images.iter().zip(&ds.depths).enumerate() {
        for (c, (img, depth)) in imgs.iter().zip(depths).enumerate() {
            let name = camera_name(c);
            formats::write_atomic(&dir.join(image_path(&name, f)), &formats::encode_png_rgb(img))?;
            formats::write_atomic(&dir.join(depth_path(&name, f)), &formats::encode_pfm(depth))?;
        }
        formats::write_atomic(&dir.join(lidar_path(f)), &formats::encode_lidar(&ds.lidar[f]))?;
    }
    for set in &ds.novel_gt {
        for (&f, img) in set.frames.iter().zip(&set.images) {
            formats::write_atomic(&dir.join(novel_path(set.shift, f)), &formats::encode_png_rgb(img))?;
        }
    }
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    formats::write_atomic(&dir.join(MANIFEST), &json)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let bytes = formats::read_bytes(&path)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))?;
    let version = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::schema(&path, "missing schema_version"))?;
    if version != SCHEMA_VERSION as u64 {
        return Err(Error::Version { path, found: version.min(u32::MAX as u64) as u32, supported: SCHEMA_VERSION });
    }
    serde_json::from_value(value).map_err(|e| Error::schema(&path, e.to_string()))
}

fn read_required(dir: &Path, rel: &Path, manifest: &Path, what: &str) -> Result<(PathBuf, Vec<u8>)> {
    let path = dir.join(rel);
    if !path.is_file() {
        return Err(Error::schema(manifest, format!("{what}: missing {}", rel.display())));
    }
    let bytes = formats::read_bytes(&path)?;
    Ok((path, bytes))
}

fn pose_of(m: &[f64; 16], path: &Path, what: &str) -> Result<Pose> {
    Pose::from_matrix(&Matrix4::from_row_slice(m)).map_err(|e| Error::schema(path, format!("{what}: {e}")))
}

pub fn read_dataset(dir: &Path) -> Result<StoredDataset> {
    let manifest = read_manifest(dir)?;
    let mpath = dir.join(MANIFEST);
    if manifest.cameras.is_empty() {
        return Err(Error::schema(&mpath, "no cameras"));
    }
    let rig = manifest
        .cameras
        .iter()
        .map(|c| {
            let k = Intrinsics::from_matrix(&Mat3::from_row_slice(&c.intrinsics))
                .map_err(|e| Error::schema(&mpath, format!("camera {}: {e}", c.name)))?;
            Ok(Camera { intrinsics: k, pose: Pose::identity(), width: c.width, height: c.height })
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut cameras, mut images, mut depths, mut lidar) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (f, entry) in manifest.frames.iter().enumerate() {
        let what = format!("frame {}", entry.index);
        if entry.index != f {
            return Err(Error::schema(&mpath, format!("{what}: frames must be listed in order from 0")));
        }
        if entry.poses.len() != rig.len() {
            return Err(Error::schema(&mpath, format!("{what}: expected {} poses", rig.len())));
        }
        let mut cams = Vec::new();
        let mut imgs = Vec::new();
        let mut ds = Vec::new();
        for ((template, entry_cam), m) in rig.iter().zip(&manifest.cameras).zip(&entry.poses) {
            let cam = template.with_pose(pose_of(m, &mpath, &what)?);
            let (p, b) = read_required(dir, &image_path(&entry_cam.name, f), &mpath, &what)?;
            let img = formats::decode_png_rgb(&p, &b)?;
            let (p, b) = read_required(dir, &depth_path(&entry_cam.name, f), &mpath, &what)?;
            let depth = formats::decode_pfm(&p, &b)?;
            if img.dims() != (cam.width, cam.height) || depth.dims() != (cam.width, cam.height) {
                return Err(Error::schema(
                    &mpath,
                    format!("{what}: {} image or depth size differs from the camera", entry_cam.name),
                ));
            }
            cams.push(cam);
            imgs.push(img);
            ds.push(depth);
        }
        let (p, b) = read_required(dir, &lidar_path(f), &mpath, &what)?;
        lidar.push(formats::decode_lidar(&p, &b, f)?);
        cameras.push(cams);
        images.push(imgs);
        depths.push(ds);
    }
    let mut node_poses = NodePoseTable::new();
    for n in &manifest.node_poses {
        let poses: NodePoses = n.poses.iter().map(|e| (e.frame, e.pose)).collect();
        if node_poses.insert(n.node_id, poses).is_some() {
            return Err(Error::schema(&mpath, format!("node {} listed twice", n.node_id)));
        }
    }
    let mut novel_gt = Vec::new();
    for set in &manifest.novel_gt {
        let what = format!("novel set at shift {}", set.shift);
        if set.frames.len() != set.poses.len() {
            return Err(Error::schema(&mpath, format!("{what}: frame and pose counts differ")));
        }
        let mut cams = Vec::new();
        let mut imgs = Vec::new();
        for (&f, m) in set.frames.iter().zip(&set.poses) {
            let cam = rig[0].with_pose(pose_of(m, &mpath, &what)?);
            let (p, b) = read_required(dir, &novel_path(set.shift, f), &mpath, &format!("{what}, frame {f}"))?;
            let img = formats::decode_png_rgb(&p, &b)?;
            if img.dims() != (cam.width, cam.height) {
                return Err(Error::schema(&mpath, format!("{what}, frame {f}: image size differs from the camera")));
            }
            cams.push(cam);
            imgs.push(img);
        }
        novel_gt.push(NovelSet { shift: set.shift, frames: set.frames.clone(), cameras: cams, images: imgs });
    }
    let dataset = Dataset { cameras, images, depths, lidar, node_poses, holdout: manifest.holdout, novel_gt };
    dataset.validate().map_err(|e| Error::schema(&mpath, e.to_string()))?;
    Ok(StoredDataset { dataset, world: manifest.world })
}
