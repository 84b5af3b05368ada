use drivex::dataset_io::*;
use drivex::Error;
use drivex_core::synthworld::{generate_world, render_dataset, CaptureSpec, Dataset, WorldSpec};

fn compact(seed: u64) -> (WorldSpec, Dataset) {
    let spec = WorldSpec::compact(seed);
    let world = generate_world(&spec).unwrap();
    (spec, render_dataset(&world, &CaptureSpec::compact()).unwrap())
}

#[test]
fn round_trip_is_exact() {
    let (spec, ds) = compact(2);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, Some(&spec), dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.world.as_ref(), Some(&spec));
    let got = back.dataset;
    for (a, b) in ds.depths.iter().flatten().zip(got.depths.iter().flatten()) {
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(got.cameras, ds.cameras);
    assert_eq!(got.lidar, ds.lidar);
    assert_eq!(got.node_poses, ds.node_poses);
    assert_eq!(got.holdout, ds.holdout);
    assert_eq!(got.images, ds.images);
    assert_eq!(got.novel_gt, ds.novel_gt);
    assert_eq!(got, ds);
}

#[test]
fn unquantized_images_come_back_after_one_quantization() {
    let (_, mut ds) = compact(4);
    let v = ds.images[0][0].data[7];
    ds.images[0][0].data[7] = v + 0.3 / 255.0;
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, None, dir.path()).unwrap();
    let got = read_dataset(dir.path()).unwrap();
    assert_eq!(got.world, None);
    let mut q = ds.images[0][0].clone();
    q.quantize_u8();
    assert_eq!(got.dataset.images[0][0], q);
}

#[test]
fn layout_matches_the_documented_paths() {
    let (_, ds) = compact(1);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, None, dir.path()).unwrap();
    for rel in [
        "manifest.json",
        "images/front/00000.png",
        "images/left/00009.png",
        "depth/right/00003.pfm",
        "lidar/00009.dxpc",
        "novel_gt/shift_1/00000.png",
        "novel_gt/shift_3/00009.png",
    ] {
        assert!(dir.path().join(rel).is_file(), "{rel}");
    }
    let m = read_manifest(dir.path()).unwrap();
    assert_eq!(m.schema_version, SCHEMA_VERSION);
    assert_eq!(m.frames.len(), 10);
    assert_eq!(m.holdout, [0, 5]);
    assert_eq!(m.cameras.iter().map(|c| c.name.as_str()).collect::<Vec<_>>(), ["front", "left", "right"]);
    let k = &m.cameras[0].intrinsics;
    assert_eq!([k[0], k[4], k[8], k[1], k[3]], [20.0, 20.0, 1.0, 0.0, 0.0]);
    let pose = &m.frames[3].poses[0];
    assert_eq!(pose[12..], [0.0, 0.0, 0.0, 1.0]);
    assert_eq!(pose[11], -0.8 * 3.0);
}

#[test]
fn same_seed_gives_identical_manifests() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (spec, ds) = compact(9);
    write_dataset(&ds, Some(&spec), a.path()).unwrap();
    let (spec, ds) = compact(9);
    write_dataset(&ds, Some(&spec), b.path()).unwrap();
    let read = |d: &std::path::Path| std::fs::read(d.join(MANIFEST)).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn missing_image_names_the_frame() {
    let (_, ds) = compact(1);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, None, dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("images/left/00007.png")).unwrap();
    let err = read_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Schema { .. }), "{err}");
    let msg = err.to_string();
    assert!(msg.contains("frame 7") && msg.contains("images/left/00007.png"), "{msg}");
}

#[test]
fn future_schema_version_is_a_version_error() {
    let (_, ds) = compact(1);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, None, dir.path()).unwrap();
    let path = dir.path().join(MANIFEST);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"schema_version\": 1", "\"schema_version\": 2", 1)).unwrap();
    let err = read_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Version { found: 2, supported: 1, .. }), "{err}");
}

#[test]
fn unknown_manifest_keys_are_schema_errors() {
    let (_, ds) = compact(1);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, None, dir.path()).unwrap();
    let path = dir.path().join(MANIFEST);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen('{', "{\"extra\": 1,", 1)).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Schema { .. })));
}

#[test]
fn damaged_pose_is_rejected() {
    let (_, ds) = compact(1);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, None, dir.path()).unwrap();
    let mut m = read_manifest(dir.path()).unwrap();
    m.frames[2].poses[1][0] = 3.0;
    std::fs::write(dir.path().join(MANIFEST), serde_json::to_vec(&m).unwrap()).unwrap();
    let err = read_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("frame 2"), "{err}");
}

#[test]
fn missing_directory_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_dataset(&dir.path().join("absent")), Err(Error::Io { .. })));
}
