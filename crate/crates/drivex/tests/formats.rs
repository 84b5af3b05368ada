use std::path::Path;

use drivex::formats::*;
use drivex::Error;
use drivex_core::imaging::{BitMask, DepthMap, ImageRgb};
use drivex_core::math::Vec3;
use drivex_core::scene::{Gaussian, RigidNode, RigidTransform, SceneModel};
use drivex_core::supervision::{LidarFrame, LidarPoint};
use proptest::prelude::*;

fn p() -> &'static Path {
    Path::new("mem")
}

fn gaussian(i: usize) -> Gaussian {
    let t = i as f64;
    Gaussian {
        position: Vec3::new(t * 0.5, -1.25, 3.0 + t),
        rotation: [0.5, 0.5, -0.5, 0.5],
        log_scale: Vec3::new(-1.0, -2.0, -0.5 * t),
        opacity_logit: 0.75 - t,
        color: [0.25, 0.5, 0.125 * t],
    }
}

fn sample_scene() -> SceneModel {
    let mut poses = std::collections::BTreeMap::new();
    poses.insert(0, RigidTransform::translation(Vec3::new(4.0, 0.0, 10.0)));
    poses.insert(1, RigidTransform { rotation: [0.0, 0.0, 1.0, 0.0], translation: Vec3::new(4.0, 0.0, 11.0) });
    SceneModel {
        statics: (0..3).map(gaussian).collect(),
        nodes: vec![
            RigidNode { node_id: 2, gaussians: (3..5).map(gaussian).collect(), frame_poses: poses.clone() },
            RigidNode { node_id: 7, gaussians: vec![gaussian(5)], frame_poses: poses },
        ],
        background: [0.5, 0.75, 1.0],
    }
}

#[test]
fn scene_round_trip_is_exact_for_single_precision_values() {
    let scene = sample_scene();
    let bytes = encode_scene(&scene);
    assert_eq!(&bytes[..4], b"DXGS");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), SCENE_VERSION);
    assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 6);
    let back = decode_scene(p(), &bytes).unwrap();
    assert_eq!(back, scene);
    assert_eq!(encode_scene(&back), bytes);
}

#[test]
fn scene_primitives_are_fourteen_floats_each() {
    let scene = sample_scene();
    let bytes = encode_scene(&scene);
    let g = &scene.statics[1];
    let first: Vec<f32> = bytes[16 + 14 * 4..16 + 28 * 4].chunks(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let expect = [
        g.position.x,
        g.position.y,
        g.position.z,
        g.rotation[0],
        g.rotation[1],
        g.rotation[2],
        g.rotation[3],
        g.log_scale.x,
        g.log_scale.y,
        g.log_scale.z,
        g.opacity_logit,
        g.color[0],
        g.color[1],
        g.color[2],
    ];
    assert_eq!(first, expect.map(|v| v as f32));
    let nodes_at = 16 + 6 * 14 * 4;
    assert_eq!(u32::from_le_bytes(bytes[nodes_at..nodes_at + 4].try_into().unwrap()), 2);
    let id = u32::from_le_bytes(bytes[nodes_at + 4..nodes_at + 8].try_into().unwrap());
    let start = u64::from_le_bytes(bytes[nodes_at + 8..nodes_at + 16].try_into().unwrap());
    let end = u64::from_le_bytes(bytes[nodes_at + 16..nodes_at + 24].try_into().unwrap());
    assert_eq!((id, start, end), (2, 3, 5));
}

#[test]
fn scene_decoding_rejects_damage() {
    let bytes = encode_scene(&sample_scene());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_scene(p(), &bad), Err(Error::Format { .. })));
    let mut future = bytes.clone();
    future[4..8].copy_from_slice(&(SCENE_VERSION + 1).to_le_bytes());
    assert!(matches!(decode_scene(p(), &future), Err(Error::Version { found, .. }) if found == SCENE_VERSION + 1));
    assert!(decode_scene(p(), &bytes[..bytes.len() - 1]).is_err());
    let mut long = bytes.clone();
    long.push(0);
    assert!(decode_scene(p(), &long).is_err());
    let mut huge = bytes;
    huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
    assert!(decode_scene(p(), &huge).is_err());
}

#[test]
fn lidar_round_trip_and_static_tag() {
    let frame = LidarFrame {
        frame: 4,
        points: vec![
            LidarPoint { position: Vec3::new(1.5, -0.25, 12.0), color: [0.5, 0.25, 1.0], node_id: None },
            LidarPoint { position: Vec3::new(-3.0, 1.0, 7.75), color: [0.0, 1.0, 0.5], node_id: Some(3) },
        ],
    };
    let bytes = encode_lidar(&frame);
    assert_eq!(bytes.len(), 16 + 2 * 28);
    let id = f32::from_le_bytes(bytes[16 + 24..16 + 28].try_into().unwrap());
    assert_eq!(id, -1.0);
    assert_eq!(decode_lidar(p(), &bytes, 4).unwrap(), frame);
}

#[test]
fn lidar_rejects_fractional_node_ids() {
    let mut bytes = encode_lidar(&LidarFrame {
        frame: 0,
        points: vec![LidarPoint { position: Vec3::zeros(), color: [0.0; 3], node_id: Some(1) }],
    });
    bytes[16 + 24..16 + 28].copy_from_slice(&1.5f32.to_le_bytes());
    assert!(decode_lidar(p(), &bytes, 0).is_err());
}

#[test]
fn pfm_header_and_row_order() {
    let mut d = DepthMap::invalid(3, 2);
    d.data = vec![1.0, 2.0, 3.0, 4.0, 5.0, f64::INFINITY];
    let bytes = encode_pfm(&d);
    let header = b"Pf\n3 2\n-1.0\n";
    assert_eq!(&bytes[..header.len()], header);
    let first_stored = f32::from_le_bytes(bytes[header.len()..header.len() + 4].try_into().unwrap());
    assert_eq!(first_stored, 4.0);
    let back = decode_pfm(p(), &bytes).unwrap();
    assert_eq!(back.data[..5], d.data[..5]);
    assert_eq!(back.data[5], f64::INFINITY);
}

#[test]
fn pfm_rejects_color_and_big_endian() {
    assert!(decode_pfm(p(), b"PF\n1 1\n-1.0\n\0\0\0\0\0\0\0\0\0\0\0\0").is_err());
    assert!(decode_pfm(p(), b"Pf\n1 1\n1.0\n\0\0\0\0").is_err());
    assert!(decode_pfm(p(), b"Pf\n2 1\n-1.0\n\0\0\0\0").is_err());
}

#[test]
fn png_kind_mismatch_is_an_error() {
    let mask = BitMask::new(4, 3, true);
    let bytes = encode_png_mask(&mask);
    assert!(decode_png_rgb(p(), &bytes).is_err());
    assert_eq!(decode_png_mask(p(), &bytes).unwrap(), mask);
    assert!(decode_png_mask(p(), &encode_png_rgb(&ImageRgb::new(2, 2))).is_err());
    assert!(decode_png_rgb(p(), b"not a png").is_err());
}

#[test]
fn atomic_write_replaces_and_leaves_no_temporaries() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub").join("f.bin");
    write_atomic(&path, b"one").unwrap();
    write_atomic(&path, b"two").unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), b"two");
    let names: Vec<_> = std::fs::read_dir(path.parent().unwrap()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, ["f.bin"]);
}

proptest! {
    #[test]
    fn png_rgb_quantizes_by_rounding(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
        let mut img = ImageRgb::new(w, h);
        let mut s = seed;
        for v in &mut img.data {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = (s >> 11) as f64 / (1u64 << 53) as f64;
        }
        let back = decode_png_rgb(p(), &encode_png_rgb(&img)).unwrap();
        prop_assert_eq!(back.dims(), (w, h));
        for (a, b) in img.data.iter().zip(&back.data) {
            prop_assert_eq!(*b, (a * 255.0).round() / 255.0);
        }
        let mut q = img.clone();
        q.quantize_u8();
        prop_assert_eq!(decode_png_rgb(p(), &encode_png_rgb(&q)).unwrap(), q);
    }

    #[test]
    fn png_mask_round_trip(bits in prop::collection::vec(any::<bool>(), 1..80)) {
        let mut m = BitMask::new(bits.len(), 1, false);
        m.data = bits;
        prop_assert_eq!(decode_png_mask(p(), &encode_png_mask(&m)).unwrap(), m);
    }

    #[test]
    fn pfm_round_trip_is_exact_for_f32(vals in prop::collection::vec(any::<f32>().prop_filter("not nan", |v| !v.is_nan()), 1..60), w in 1usize..6) {
        let h = vals.len().div_ceil(w);
        let mut d = DepthMap::invalid(w, h);
        for (slot, v) in d.data.iter_mut().zip(&vals) {
            *slot = *v as f64;
        }
        prop_assert_eq!(decode_pfm(p(), &encode_pfm(&d)).unwrap(), d);
    }
}
