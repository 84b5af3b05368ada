//! Evaluation report emission: JSON, CSV and SVG line charts.

use std::fmt::Write as _;
use std::path::Path;

use drivex_core::evaluation::EvalReport;

use crate::error::{Error, Result};
use crate::formats;

pub const REPORT_JSON: &str = "report.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const PSNR_SVG: &str = "psnr_vs_shift.svg";
pub const MASK_SVG: &str = "masked_fraction.svg";

pub fn report_json(report: &EvalReport) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::Config(format!("report is not serializable: {e}")))
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let bytes = formats::read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::schema(path, e.to_string()))
}

/// One row per novel shift under a `shift,psnr,ssim` header.
pub fn metrics_csv(report: &EvalReport) -> String {
    let mut out = String::from("shift,psnr,ssim\n");
    for n in &report.novel {
        writeln!(out, "{},{},{}", n.shift, n.metrics.psnr, n.metrics.ssim).unwrap();
    }
    out
}

pub struct Series<'a> {
    pub name: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Self-contained SVG chart with one polyline per series. Non-finite
/// points are dropped.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const M: f64 = 48.0;
    let finite: Vec<(f64, f64)> =
        series.iter().flat_map(|s| s.points.iter().copied()).filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    let bounds = |sel: fn(&(f64, f64)) -> f64| {
        let lo = finite.iter().map(sel).fold(f64::INFINITY, f64::min);
        let hi = finite.iter().map(sel).fold(f64::NEG_INFINITY, f64::max);
        match (lo.is_finite(), hi > lo) {
            (false, _) => (0.0, 1.0),
            (true, false) => (lo - 0.5, lo + 0.5),
            (true, true) => (lo, hi),
        }
    };
    let (x0, x1) = bounds(|p| p.0);
    let (y0, y1) = bounds(|p| p.1);
    let px = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut svg = String::new();
    writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
    writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#).unwrap();
    writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title)).unwrap();
    writeln!(svg, r#"<path d="M{M} {} L{} {} M{M} {} L{M} {M}" stroke="black" fill="none"/>"#, H - M, W - M, H - M, H - M)
        .unwrap();
    writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, W / 2.0, H - 10.0, escape(x_label))
        .unwrap();
    writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    )
    .unwrap();
    for (v, x, anchor) in [(x0, px(x0), "start"), (x1, px(x1), "end")] {
        writeln!(svg, r#"<text x="{x}" y="{}" text-anchor="{anchor}" font-size="10">{v:.3}</text>"#, H - M + 14.0).unwrap();
    }
    for (v, y) in [(y0, py(y0)), (y1, py(y1))] {
        writeln!(svg, r#"<text x="{}" y="{y}" text-anchor="end" font-size="10">{v:.3}</text>"#, M - 4.0).unwrap();
    }
    for (k, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"><title>{}</title></polyline>"#,
            escape(s.color),
            pts.join(" "),
            escape(s.name)
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="11" fill="{}">{}</text>"#,
            W - M,
            M + 14.0 * k as f64,
            escape(s.color),
            escape(s.name)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn psnr_chart(report: &EvalReport) -> String {
    let novel =
        Series { name: "novel PSNR", color: "#1f77b4", points: report.novel.iter().map(|n| (n.shift, n.metrics.psnr)).collect() };
    line_chart("PSNR vs shift", "shift (m)", "PSNR (dB)", &[novel])
}

pub fn mask_chart(report: &EvalReport) -> String {
    let s = Series {
        name: "masked fraction",
        color: "#d62728",
        points: report.mask_stats.iter().enumerate().map(|(i, &m)| (i as f64, m)).collect(),
    };
    line_chart("Masked fraction per refresh", "refresh index", "masked fraction", &[s])
}

/// Writes the JSON report, the CSV table and both charts into `dir`.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<()> {
    formats::write_atomic(&dir.join(REPORT_JSON), report_json(report)?.as_bytes())?;
    formats::write_atomic(&dir.join(METRICS_CSV), metrics_csv(report).as_bytes())?;
    formats::write_atomic(&dir.join(PSNR_SVG), psnr_chart(report).as_bytes())?;
    formats::write_atomic(&dir.join(MASK_SVG), mask_chart(report).as_bytes())
}
