//! Holdout and shifted-trajectory metrics against synthetic ground truth.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::imaging::{psnr, ssim_mean, ImageRgb};
use crate::par;
use crate::raster::{RasterSettings, Rasterization};
use crate::scene::SceneModel;
use crate::synthworld::{Dataset, FRONT};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `+inf` when every frame matches exactly.
    #[serde(with = "psnr_serde")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NovelMetrics {
    pub shift: f64,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub recorded: Metrics,
    /// One entry per requested shift, in request order.
    pub novel: Vec<NovelMetrics>,
    /// Masked fraction at each buffer refresh.
    pub mask_stats: Vec<f64>,
    /// Wall-clock evaluation time; absent unless requested, so that
    /// identically seeded runs produce identical reports.
    pub runtime_seconds: Option<f64>,
    pub config: Option<TrainConfig>,
}

impl EvalReport {
    pub fn novel_at(&self, shift: f64) -> Option<Metrics> {
        self.novel.iter().find(|n| n.shift == shift).map(|n| n.metrics)
    }
}

/// Mean PSNR and mean SSIM of `scene` rendered at each `(camera, frame)`.
pub fn eval_views(scene: &SceneModel, views: &[(Camera, usize)], truth: &[&ImageRgb]) -> Result<Metrics> {
    if views.is_empty() || views.len() != truth.len() {
        return Err(Error::domain("need one ground-truth image per evaluated view"));
    }
    let per_view = par::map_collect(views.len(), |i| -> Result<(f64, f64)> {
        let (cam, frame) = &views[i];
        let img = Rasterization::new(scene, cam, *frame, RasterSettings::default())?.render().color;
        Ok((psnr(&img, truth[i])?, ssim_mean(&img, truth[i])?))
    });
    let (mut p, mut s) = (0.0, 0.0);
    for r in per_view {
        let (a, b) = r?;
        p += a;
        s += b;
    }
    let n = views.len() as f64;
    Ok(Metrics { psnr: p / n, ssim: s / n })
}

/// Metrics over the front views of the holdout frames.
pub fn eval_recorded(scene: &SceneModel, dataset: &Dataset) -> Result<Metrics> {
    if dataset.holdout.is_empty() {
        return Err(Error::domain("dataset has no holdout frames"));
    }
    let views: Vec<(Camera, usize)> = dataset.holdout.iter().map(|&f| (dataset.cameras[f][FRONT], f)).collect();
    let truth: Vec<&ImageRgb> = dataset.holdout.iter().map(|&f| &dataset.images[f][FRONT]).collect();
    eval_views(scene, &views, &truth)
}

/// Metrics along each stored shifted trajectory.
pub fn eval_novel(scene: &SceneModel, dataset: &Dataset, shifts: &[f64]) -> Result<Vec<NovelMetrics>> {
    shifts
        .iter()
        .map(|&shift| {
            let set = dataset
                .novel_set(shift)
                .ok_or_else(|| Error::Config(format!("dataset has no novel ground truth at shift {shift}")))?;
            let views: Vec<(Camera, usize)> = set.cameras.iter().copied().zip(set.frames.iter().copied()).collect();
            let truth: Vec<&ImageRgb> = set.images.iter().collect();
            Ok(NovelMetrics { shift, metrics: eval_views(scene, &views, &truth)? })
        })
        .collect()
}

mod psnr_serde {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(alloc::string::String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(other) => Err(de::Error::custom(alloc::format!("invalid PSNR {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests;
