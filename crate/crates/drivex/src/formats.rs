//! On-disk encodings: 8-bit PNG images and masks, PFM depth, DXGS scene
//! checkpoints and DXPC LiDAR frames. Writes go through a temporary file
//! and a rename.

use std::fs;
use std::io::Write;
use std::path::Path;

use drivex_core::imaging::{BitMask, DepthMap, ImageRgb};
use drivex_core::math::{self, Vec3};
use drivex_core::scene::{Gaussian, RigidNode, RigidTransform, SceneModel, PARAMS_PER_PRIMITIVE};
use drivex_core::supervision::{LidarFrame, LidarPoint};

use crate::error::{Error, Result};

pub const SCENE_MAGIC: &[u8; 4] = b"DXGS";
pub const SCENE_VERSION: u32 = 1;
pub const LIDAR_MAGIC: &[u8; 4] = b"DXPC";
pub const LIDAR_VERSION: u32 = 1;

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn to_u8(v: f64) -> u8 {
    math::round(v.clamp(0.0, 1.0) * 255.0) as u8
}

fn encode_png(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("in-memory PNG header");
        w.write_image_data(data).expect("in-memory PNG data");
    }
    out
}

/// Channels quantized by `round(v·255)`.
pub fn encode_png_rgb(img: &ImageRgb) -> Vec<u8> {
    let data: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
    encode_png(img.width, img.height, png::ColorType::Rgb, &data)
}

/// Masked pixels are 255, the rest 0.
pub fn encode_png_mask(mask: &BitMask) -> Vec<u8> {
    let data: Vec<u8> = mask.data.iter().map(|&m| if m { 255 } else { 0 }).collect();
    encode_png(mask.width, mask.height, png::ColorType::Grayscale, &data)
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<(usize, usize, png::ColorType, Vec<u8>)> {
    let dec = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = dec.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(path, "only 8-bit PNG is supported"));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, info.color_type, buf))
}

pub fn decode_png_rgb(path: &Path, bytes: &[u8]) -> Result<ImageRgb> {
    let (w, h, color, buf) = decode_png(path, bytes)?;
    if color != png::ColorType::Rgb {
        return Err(Error::format(path, format!("expected an RGB PNG, found {color:?}")));
    }
    Ok(ImageRgb::from_data(w, h, buf.iter().map(|&b| b as f64 / 255.0).collect())?)
}

pub fn decode_png_mask(path: &Path, bytes: &[u8]) -> Result<BitMask> {
    let (w, h, color, buf) = decode_png(path, bytes)?;
    if color != png::ColorType::Grayscale {
        return Err(Error::format(path, format!("expected a grayscale PNG, found {color:?}")));
    }
    let mut m = BitMask::new(w, h, false);
    for (d, b) in m.data.iter_mut().zip(&buf) {
        *d = *b >= 128;
    }
    Ok(m)
}

/// Little-endian grayscale PFM, rows stored bottom to top.
pub fn encode_pfm(depth: &DepthMap) -> Vec<u8> {
    let (w, h) = depth.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(depth.get(x, y) as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(path: &Path, bytes: &[u8]) -> Result<DepthMap> {
    let bad = |r: &str| Error::format(path, r);
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?.to_owned());
    }
    pos += 1;
    if fields[0] != "Pf" {
        return Err(bad("only the grayscale Pf variant is supported"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = fields[3].parse().map_err(|_| bad("bad scale"))?;
    if scale >= 0.0 {
        return Err(bad("big-endian PFM is not supported"));
    }
    let body = bytes.get(pos..).filter(|b| b.len() == w * h * 4).ok_or_else(|| bad("pixel data length mismatch"))?;
    let mut depth = DepthMap::invalid(w, h);
    for (k, chunk) in body.chunks_exact(4).enumerate() {
        let (x, row) = (k % w, k / w);
        depth.data[(h - 1 - row) * w + x] = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
    }
    Ok(depth)
}

fn put_f32s(out: &mut Vec<u8>, vals: impl IntoIterator<Item = f64>) {
    for v in vals {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| Error::format(self.path, "unexpected end of file"))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s<const N: usize>(&mut self) -> Result<[f64; N]> {
        let mut out = [0.0; N];
        for v in &mut out {
            *v = f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64;
        }
        Ok(out)
    }

    fn header(&mut self, magic: &[u8; 4], supported: u32) -> Result<u32> {
        if self.take(4)? != magic {
            return Err(Error::format(self.path, format!("missing {} magic", String::from_utf8_lossy(magic))));
        }
        let version = self.u32()?;
        if version == 0 || version > supported {
            return Err(Error::Version { path: self.path.to_path_buf(), found: version, supported });
        }
        Ok(version)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

/// DXGS checkpoint: header, primitives as f32, the node table with
/// per-frame 4x4 poses, then the background color.
pub fn encode_scene(scene: &SceneModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SCENE_MAGIC);
    out.extend_from_slice(&SCENE_VERSION.to_le_bytes());
    out.extend_from_slice(&(scene.primitive_count() as u64).to_le_bytes());
    put_f32s(&mut out, scene.pack());
    out.extend_from_slice(&(scene.nodes.len() as u32).to_le_bytes());
    let mut start = scene.statics.len() as u64;
    for node in &scene.nodes {
        let end = start + node.gaussians.len() as u64;
        out.extend_from_slice(&node.node_id.to_le_bytes());
        out.extend_from_slice(&start.to_le_bytes());
        out.extend_from_slice(&end.to_le_bytes());
        out.extend_from_slice(&(node.frame_poses.len() as u32).to_le_bytes());
        for (frame, pose) in &node.frame_poses {
            out.extend_from_slice(&(*frame as u32).to_le_bytes());
            let m = pose.to_matrix4();
            put_f32s(&mut out, (0..16).map(|i| m[(i / 4, i % 4)]));
        }
        start = end;
    }
    put_f32s(&mut out, scene.background);
    out
}

pub fn decode_scene(path: &Path, bytes: &[u8]) -> Result<SceneModel> {
    let mut c = Cursor { path, bytes, pos: 0 };
    c.header(SCENE_MAGIC, SCENE_VERSION)?;
    let n = c.u64()? as usize;
    if n.checked_mul(PARAMS_PER_PRIMITIVE * 4).is_none_or(|b| b > bytes.len()) {
        return Err(Error::format(path, "primitive count exceeds file size"));
    }
    let mut prims = Vec::with_capacity(n);
    for _ in 0..n {
        prims.push(Gaussian::unpack(&c.f32s::<PARAMS_PER_PRIMITIVE>()?));
    }
    let node_count = c.u32()? as usize;
    let mut nodes = Vec::with_capacity(node_count);
    let mut ranges = Vec::with_capacity(node_count);
    for _ in 0..node_count {
        let node_id = c.u32()?;
        let (start, end) = (c.u64()? as usize, c.u64()? as usize);
        let mut frame_poses = std::collections::BTreeMap::new();
        for _ in 0..c.u32()? {
            let frame = c.u32()? as usize;
            let m = c.f32s::<16>()?;
            frame_poses.insert(frame, RigidTransform::from_matrix4(&nalgebra::Matrix4::from_row_slice(&m)));
        }
        ranges.push((start, end));
        nodes.push(RigidNode { node_id, gaussians: Vec::new(), frame_poses });
    }
    let background = c.f32s::<3>()?;
    c.finish()?;
    let statics_end = ranges.first().map_or(n, |r| r.0);
    let mut expect = statics_end;
    for (node, &(start, end)) in nodes.iter_mut().zip(&ranges) {
        if start != expect || end < start || end > n {
            return Err(Error::format(path, format!("node {} has a non-contiguous primitive range", node.node_id)));
        }
        node.gaussians = prims[start..end].to_vec();
        expect = end;
    }
    if expect != n {
        return Err(Error::format(path, "node ranges do not cover the primitive list"));
    }
    prims.truncate(statics_end);
    Ok(SceneModel { statics: prims, nodes, background })
}

/// DXPC frame: header, then xyz, rgb and node id (−1 for static) as f32.
pub fn encode_lidar(frame: &LidarFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + frame.points.len() * 28);
    out.extend_from_slice(LIDAR_MAGIC);
    out.extend_from_slice(&LIDAR_VERSION.to_le_bytes());
    out.extend_from_slice(&(frame.points.len() as u64).to_le_bytes());
    for p in &frame.points {
        let id = p.node_id.map_or(-1.0, |n| n as f64);
        put_f32s(&mut out, [p.position.x, p.position.y, p.position.z, p.color[0], p.color[1], p.color[2], id]);
    }
    out
}

pub fn decode_lidar(path: &Path, bytes: &[u8], frame: usize) -> Result<LidarFrame> {
    let mut c = Cursor { path, bytes, pos: 0 };
    c.header(LIDAR_MAGIC, LIDAR_VERSION)?;
    let n = c.u64()? as usize;
    if n.checked_mul(28).is_none_or(|b| b > bytes.len()) {
        return Err(Error::format(path, "point count exceeds file size"));
    }
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let [x, y, z, r, g, b, id] = c.f32s::<7>()?;
        let node_id = if id < 0.0 {
            None
        } else if id.fract() == 0.0 && id <= u32::MAX as f64 {
            Some(id as u32)
        } else {
            return Err(Error::format(path, format!("invalid node id {id}")));
        };
        points.push(LidarPoint { position: Vec3::new(x, y, z), color: [r, g, b], node_id });
    }
    c.finish()?;
    Ok(LidarFrame { frame, points })
}
