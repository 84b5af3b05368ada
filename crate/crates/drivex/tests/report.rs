use drivex::report::*;
use drivex_core::evaluation::{EvalReport, Metrics, NovelMetrics};
use drivex_core::trainer::TrainConfig;
use proptest::prelude::*;

fn report(novel: &[(f64, f64, f64)], masks: &[f64]) -> EvalReport {
    EvalReport {
        recorded: Metrics { psnr: 29.5, ssim: 0.93 },
        novel: novel.iter().map(|&(shift, psnr, ssim)| NovelMetrics { shift, metrics: Metrics { psnr, ssim } }).collect(),
        mask_stats: masks.to_vec(),
        runtime_seconds: None,
        config: Some(TrainConfig::default()),
    }
}

fn polylines(svg: &str) -> usize {
    let doc = roxmltree::Document::parse(svg).expect("well-formed XML");
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    doc.descendants().filter(|n| n.has_tag_name("polyline")).count()
}

#[test]
fn json_round_trip_keeps_the_infinite_sentinel() {
    let r = report(&[(1.0, f64::INFINITY, 1.0), (3.0, 21.25, 0.8)], &[0.4, 0.35]);
    let text = report_json(&r).unwrap();
    assert!(text.contains("\"inf\""));
    let back: EvalReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, r);
}

#[test]
fn json_has_the_report_fields() {
    let v: serde_json::Value = serde_json::from_str(&report_json(&report(&[(2.0, 25.0, 0.9)], &[])).unwrap()).unwrap();
    for key in ["recorded", "novel", "mask_stats", "runtime_seconds", "config"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert_eq!(v["novel"][0]["shift"], 2.0);
    assert_eq!(v["novel"][0]["psnr"], 25.0);
    assert!(v["runtime_seconds"].is_null());
}

#[test]
fn emitted_files() {
    let dir = tempfile::tempdir().unwrap();
    let r = report(&[(1.0, 27.0, 0.95), (2.0, 25.0, 0.9), (3.0, 22.5, 0.85)], &[0.5, 0.45, 0.44]);
    emit_report(&r, dir.path()).unwrap();
    assert_eq!(read_report(&dir.path().join(REPORT_JSON)).unwrap(), r);
    let csv = std::fs::read_to_string(dir.path().join(METRICS_CSV)).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "shift,psnr,ssim");
    assert_eq!(lines[3], "3,22.5,0.85");
    for name in [PSNR_SVG, MASK_SVG] {
        assert_eq!(polylines(&std::fs::read_to_string(dir.path().join(name)).unwrap()), 1);
    }
}

#[test]
fn chart_with_several_series_and_degenerate_data() {
    let s = |name, points| Series { name, color: "black", points };
    let svg =
        line_chart("a < b & c", "x", "y", &[s("one", vec![(0.0, 1.0)]), s("two", vec![]), s("three", vec![(1.0, f64::NAN)])]);
    assert_eq!(polylines(&svg), 3);
    assert!(svg.contains("a &lt; b &amp; c"));
}

#[test]
fn polyline_points_follow_the_data() {
    let svg = psnr_chart(&report(&[(1.0, 30.0, 0.9), (2.0, 25.0, 0.9), (3.0, 20.0, 0.9)], &[]));
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let line = doc.descendants().find(|n| n.has_tag_name("polyline")).unwrap();
    let pts: Vec<(f64, f64)> = line
        .attribute("points")
        .unwrap()
        .split(' ')
        .map(|p| {
            let (x, y) = p.split_once(',').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect();
    assert_eq!(pts.len(), 3);
    assert!(pts[0].0 < pts[1].0 && pts[1].0 < pts[2].0);
    assert!(pts[0].1 < pts[1].1 && pts[1].1 < pts[2].1);
}

proptest! {
    #[test]
    fn finite_reports_round_trip(
        rows in prop::collection::vec((0.0f64..10.0, -50.0f64..100.0, -1.0f64..1.0), 0..6),
        masks in prop::collection::vec(0.0f64..1.0, 0..5),
        runtime in prop::option::of(0.0f64..1e4),
    ) {
        let mut r = report(&rows, &masks);
        r.runtime_seconds = runtime;
        let back: EvalReport = serde_json::from_str(&report_json(&r).unwrap()).unwrap();
        prop_assert_eq!(&back, &r);
        prop_assert_eq!(metrics_csv(&r).lines().count(), rows.len() + 1);
        prop_assert_eq!(polylines(&psnr_chart(&r)), 1);
        prop_assert_eq!(polylines(&mask_chart(&r)), 1);
    }
}
