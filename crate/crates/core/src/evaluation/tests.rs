use super::*;
use crate::imaging::ssim_mean;
use crate::raster::render;
use crate::synthworld::{generate_world, render_dataset, CaptureSpec, WorldSpec};

fn compact() -> (SceneModel, Dataset) {
    let world = generate_world(&WorldSpec::compact(5)).unwrap();
    let ds = render_dataset(&world, &CaptureSpec::compact()).unwrap();
    (world, ds)
}

fn perturbed(world: &SceneModel) -> SceneModel {
    let mut s = world.clone();
    for (i, g) in s.primitives_mut().enumerate() {
        let t = (i as f64 * 0.618).fract();
        g.color = [(g.color[0] + 0.3 * t).min(1.0), g.color[1] * (1.0 - 0.4 * t), g.color[2]];
        g.position.y += 0.05 * (t - 0.5);
    }
    s
}

fn loop_psnr(a: &ImageRgb, b: &ImageRgb) -> f64 {
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

#[test]
fn ground_truth_world_is_at_the_ceiling() {
    let (world, ds) = compact();
    let rec = eval_recorded(&world, &ds).unwrap();
    assert!(rec.psnr >= 50.0, "{rec:?}");
    assert!(rec.ssim >= 0.999, "{rec:?}");
    for n in eval_novel(&world, &ds, &[1.0, 2.0, 3.0]).unwrap() {
        assert!(n.metrics.psnr >= 50.0 && n.metrics.ssim >= 0.999, "{n:?}");
    }
}

#[test]
fn metrics_match_a_direct_loop() {
    let (world, ds) = compact();
    let scene = perturbed(&world);
    let (mut p, mut s) = (0.0, 0.0);
    for &f in &ds.holdout {
        let img = render(&scene, &ds.cameras[f][FRONT], f).unwrap().color;
        p += loop_psnr(&img, &ds.images[f][FRONT]);
        s += ssim_mean(&img, &ds.images[f][FRONT]).unwrap();
    }
    let n = ds.holdout.len() as f64;
    let rec = eval_recorded(&scene, &ds).unwrap();
    assert!((rec.psnr - p / n).abs() < 1e-9);
    assert!((rec.ssim - s / n).abs() < 1e-9);

    let set = ds.novel_set(2.0).unwrap();
    let mut p = 0.0;
    for ((cam, &f), gt) in set.cameras.iter().zip(&set.frames).zip(&set.images) {
        p += loop_psnr(&render(&scene, cam, f).unwrap().color, gt);
    }
    let novel = eval_novel(&scene, &ds, &[2.0]).unwrap();
    assert_eq!(novel.len(), 1);
    assert!((novel[0].metrics.psnr - p / set.images.len() as f64).abs() < 1e-9);
    assert!(novel[0].metrics.psnr.is_finite());
}

#[test]
fn view_order_does_not_matter() {
    let (world, ds) = compact();
    let scene = perturbed(&world);
    let set = ds.novel_set(1.0).unwrap();
    let views: Vec<(Camera, usize)> = set.cameras.iter().copied().zip(set.frames.iter().copied()).collect();
    let truth: Vec<&ImageRgb> = set.images.iter().collect();
    let a = eval_views(&scene, &views, &truth).unwrap();
    let rv: Vec<_> = views.iter().rev().copied().collect();
    let rt: Vec<_> = truth.iter().rev().copied().collect();
    let b = eval_views(&scene, &rv, &rt).unwrap();
    assert!((a.psnr - b.psnr).abs() < 1e-12 && (a.ssim - b.ssim).abs() < 1e-12);
}

#[test]
fn deterministic() {
    let (world, ds) = compact();
    let scene = perturbed(&world);
    assert_eq!(eval_recorded(&scene, &ds).unwrap(), eval_recorded(&scene, &ds).unwrap());
    assert_eq!(eval_novel(&scene, &ds, &[3.0, 1.0]).unwrap(), eval_novel(&scene, &ds, &[3.0, 1.0]).unwrap());
}

#[test]
fn requested_shifts_keep_their_order() {
    let (world, ds) = compact();
    let out = eval_novel(&world, &ds, &[3.0, 1.0]).unwrap();
    assert_eq!(out.iter().map(|n| n.shift).collect::<Vec<_>>(), [3.0, 1.0]);
}

#[test]
fn missing_novel_set_is_a_config_error() {
    let (world, ds) = compact();
    assert!(matches!(eval_novel(&world, &ds, &[1.0, 4.0]), Err(Error::Config(_))));
}

#[test]
fn empty_holdout_is_rejected() {
    let (world, mut ds) = compact();
    ds.holdout.clear();
    assert!(matches!(eval_recorded(&world, &ds), Err(Error::Domain(_))));
}

#[test]
fn view_and_truth_counts_must_match() {
    let (world, ds) = compact();
    let views = [(ds.cameras[0][FRONT], 0)];
    assert!(eval_views(&world, &views, &[]).is_err());
    assert!(eval_views(&world, &[], &[]).is_err());
}

#[test]
fn novel_at_finds_exact_shift() {
    let m = Metrics { psnr: 20.0, ssim: 0.5 };
    let r = EvalReport {
        recorded: m,
        novel: alloc::vec![NovelMetrics { shift: 2.0, metrics: m }],
        mask_stats: Vec::new(),
        runtime_seconds: None,
        config: None,
    };
    assert_eq!(r.novel_at(2.0), Some(m));
    assert_eq!(r.novel_at(3.0), None);
}
