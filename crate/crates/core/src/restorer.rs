//! Stand-ins for the generative restorer: the request contract, identity and
//! oracle implementations, and the edge-aware training-mask sampler.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::imaging::{check_same, perturb_gaussian_noise, sobel_edge_intensity, BitMask, ImageRgb};
use crate::math;
use crate::raster::{RasterSettings, Rasterization};
use crate::scene::SceneModel;
use crate::supervision::{SparseDepthImage, UnreliabilityMask};

pub const DEFAULT_STRENGTH: f64 = 0.6;

/// One novel-trajectory video to restore.
#[derive(Debug, Clone)]
pub struct RestorationRequest {
    pub trajectory: usize,
    /// Scene time of every frame of the video.
    pub frame: usize,
    /// Camera of every frame.
    pub cameras: Vec<Camera>,
    pub frames: Vec<ImageRgb>,
    pub masks: Vec<UnreliabilityMask>,
    pub lidar_condition: Vec<SparseDepthImage>,
    pub strength: f64,
    pub seed: u64,
}

impl RestorationRequest {
    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        if self.masks.len() != n || self.lidar_condition.len() != n || self.cameras.len() != n {
            return Err(self.fail("frames, masks, cameras and conditions differ in length"));
        }
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(self.fail("strength must lie in [0, 1]"));
        }
        for i in 0..n {
            let d = self.frames[i].dims();
            check_same(d, self.masks[i].mask.dims())?;
            check_same(d, self.lidar_condition[i].depth.dims())?;
            check_same(d, (self.cameras[i].width, self.cameras[i].height))?;
        }
        Ok(())
    }

    fn fail(&self, reason: &str) -> Error {
        Error::Restorer { trajectory: self.trajectory, reason: reason.into() }
    }
}

pub trait Restorer: Send + Sync {
    fn id(&self) -> &str;

    /// Restored frames, one per request frame, with unmasked pixels copied
    /// from the input.
    fn restore(&self, req: &RestorationRequest) -> Result<Vec<ImageRgb>>;

    /// Whether masked pixels of the output carry restored content that may
    /// be used as supervision.
    fn fills_masked(&self) -> bool {
        true
    }
}

pub fn restore_identity(req: &RestorationRequest) -> Vec<ImageRgb> {
    req.frames.clone()
}

/// Masked pixels blend toward `truth` by `strength`; the rest is copied.
pub fn restore_oracle(req: &RestorationRequest, truth: &[ImageRgb]) -> Result<Vec<ImageRgb>> {
    req.validate()?;
    if truth.len() != req.frames.len() {
        return Err(Error::domain("missing ground-truth frame for the oracle"));
    }
    let s = req.strength;
    let mut out = Vec::with_capacity(truth.len());
    for ((input, t), m) in req.frames.iter().zip(truth).zip(&req.masks) {
        check_same(input.dims(), t.dims())?;
        let mut img = input.clone();
        for (i, &masked) in m.mask.data.iter().enumerate() {
            if masked {
                for k in 3 * i..3 * i + 3 {
                    img.data[k] = (1.0 - s) * input.data[k] + s * t.data[k];
                }
            }
        }
        out.push(img);
    }
    Ok(out)
}

/// [`restore_oracle`] plus Gaussian noise on masked pixels only.
pub fn restore_noisy_oracle(req: &RestorationRequest, truth: &[ImageRgb], noise_level: f64) -> Result<Vec<ImageRgb>> {
    let mut out = restore_oracle(req, truth)?;
    if noise_level == 0.0 {
        return Ok(out);
    }
    for (j, (img, m)) in out.iter_mut().zip(&req.masks).enumerate() {
        let seed = req.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(j as u64);
        let noisy = perturb_gaussian_noise(img, noise_level, seed)?;
        for (i, &masked) in m.mask.data.iter().enumerate() {
            if masked {
                img.data[3 * i..3 * i + 3].copy_from_slice(&noisy.data[3 * i..3 * i + 3]);
            }
        }
    }
    Ok(out)
}

pub struct IdentityRestorer;

impl Restorer for IdentityRestorer {
    fn id(&self) -> &str {
        "identity"
    }

    fn restore(&self, req: &RestorationRequest) -> Result<Vec<ImageRgb>> {
        req.validate()?;
        Ok(restore_identity(req))
    }

    fn fills_masked(&self) -> bool {
        false
    }
}

/// Renders ground truth from a known world for every requested camera.
pub struct OracleRestorer {
    pub world: SceneModel,
    pub noise_level: f64,
    pub settings: RasterSettings,
    id: String,
}

impl OracleRestorer {
    pub fn new(world: SceneModel) -> Self {
        Self { world, noise_level: 0.0, settings: RasterSettings::default(), id: "oracle".into() }
    }

    pub fn noisy(world: SceneModel, noise_level: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&noise_level) {
            return Err(Error::domain("noise level must lie in [0, 1]"));
        }
        Ok(Self { world, noise_level, settings: RasterSettings::default(), id: "noisy-oracle".into() })
    }

    pub fn truth(&self, req: &RestorationRequest) -> Result<Vec<ImageRgb>> {
        req.cameras.iter().map(|c| Ok(Rasterization::new(&self.world, c, req.frame, self.settings)?.render().color)).collect()
    }
}

impl Restorer for OracleRestorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn restore(&self, req: &RestorationRequest) -> Result<Vec<ImageRgb>> {
        req.validate()?;
        let truth = self.truth(req).map_err(|e| Error::Restorer { trajectory: req.trajectory, reason: alloc::format!("{e}") })?;
        restore_noisy_oracle(req, &truth, self.noise_level)
    }
}

/// Boxed restorer selected by id: `identity`, `oracle` or `noisy-oracle`.
pub fn restorer_by_id(id: &str, world: Option<SceneModel>, noise_level: f64) -> Result<Box<dyn Restorer>> {
    match id {
        "identity" => Ok(Box::new(IdentityRestorer)),
        "oracle" | "noisy-oracle" => {
            let world = world.ok_or_else(|| Error::Config(alloc::format!("restorer {id} needs a ground-truth world")))?;
            if id == "oracle" {
                Ok(Box::new(OracleRestorer::new(world)))
            } else {
                Ok(Box::new(OracleRestorer::noisy(world, noise_level)?))
            }
        }
        other => Err(Error::Config(alloc::format!("unknown restorer {other:?}"))),
    }
}

/// Pixel indices drawn without replacement with probability proportional
/// to Sobel intensity plus `baseline`. Zero-probability pixels are never
/// drawn, so fewer than `pixel_budget` indices may be returned.
pub fn edge_aware_sample_centers(img: &ImageRgb, pixel_budget: usize, baseline: f64, seed: u64) -> Result<Vec<usize>> {
    if pixel_budget == 0 || pixel_budget > img.pixel_count() {
        return Err(Error::domain("pixel budget must lie in [1, pixel count]"));
    }
    if !(baseline >= 0.0) {
        return Err(Error::domain("baseline must be non-negative"));
    }
    let edges = sobel_edge_intensity(img)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Weighted reservoir keys ln(u)/w; the largest keys form the sample.
    let mut keys: Vec<(f64, usize)> = edges
        .data
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let u: f64 = 1.0 - rng.random::<f64>();
            (i, e + baseline, u)
        })
        .filter(|&(_, w, _)| w > 0.0)
        .map(|(i, w, u)| (math::ln(u) / w, i))
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keys.truncate(pixel_budget);
    Ok(keys.into_iter().map(|(_, i)| i).collect())
}

/// Training-style mask: every sampled pixel masks its 3×3 neighborhood.
pub fn edge_aware_mask_sample(img: &ImageRgb, pixel_budget: usize, baseline: f64, seed: u64) -> Result<BitMask> {
    let (w, h) = img.dims();
    let mut mask = BitMask::new(w, h, false);
    for i in edge_aware_sample_centers(img, pixel_budget, baseline, seed)? {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (px, py) = (x + dx, y + dy);
                if px >= 0 && py >= 0 && px < w as i64 && py < h as i64 {
                    mask.set(px as usize, py as usize, true);
                }
            }
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Intrinsics, Pose};
    use crate::imaging::{ScalarField, NOISE_SIGMA_MAX};
    use alloc::vec;

    fn request(n: usize, w: usize, h: usize, masked: impl Fn(usize, usize) -> bool) -> RestorationRequest {
        let mut mask = BitMask::new(w, h, false);
        for y in 0..h {
            for x in 0..w {
                mask.set(x, y, masked(x, y));
            }
        }
        let um = UnreliabilityMask { mask: mask.clone(), ssim_evidence: ScalarField::new(w, h), hole: BitMask::new(w, h, false) };
        let cam = Camera {
            intrinsics: Intrinsics { fx: 10.0, fy: 10.0, cx: 4.0, cy: 4.0 },
            pose: Pose::identity(),
            width: w,
            height: h,
        };
        RestorationRequest {
            trajectory: 2,
            frame: 0,
            cameras: vec![cam; n],
            frames: (0..n).map(|k| ImageRgb::filled(w, h, [0.1 * k as f64, 0.5, 0.9])).collect(),
            masks: vec![um; n],
            lidar_condition: vec![SparseDepthImage::empty(w, h); n],
            strength: DEFAULT_STRENGTH,
            seed: 17,
        }
    }

    fn truth(n: usize, w: usize, h: usize) -> Vec<ImageRgb> {
        (0..n).map(|_| ImageRgb::filled(w, h, [0.7, 0.2, 0.4])).collect()
    }

    #[test]
    fn identity_ignores_strength() {
        let mut r = request(3, 8, 6, |x, _| x < 4);
        let a = IdentityRestorer.restore(&r).unwrap();
        r.strength = 1.0;
        assert_eq!(a, IdentityRestorer.restore(&r).unwrap());
        assert_eq!(a, r.frames);
    }

    #[test]
    fn oracle_cases() {
        let r = request(2, 8, 6, |_, _| false);
        assert_eq!(restore_oracle(&r, &truth(2, 8, 6)).unwrap(), r.frames);
        let mut r = request(2, 8, 6, |_, _| true);
        r.strength = 1.0;
        assert_eq!(restore_oracle(&r, &truth(2, 8, 6)).unwrap(), truth(2, 8, 6));
        assert!(restore_oracle(&r, &truth(1, 8, 6)).is_err());
    }

    #[test]
    fn oracle_half_mask_blend() {
        let r = request(2, 8, 6, |x, _| x >= 4);
        let t = truth(2, 8, 6);
        let out = restore_oracle(&r, &t).unwrap();
        for k in 0..2 {
            for y in 0..6 {
                for x in 0..8 {
                    let (a, b) = (r.frames[k].get(x, y), t[k].get(x, y));
                    for ch in 0..3 {
                        let expect = if x >= 4 { 0.4 * a[ch] + 0.6 * b[ch] } else { a[ch] };
                        assert!((out[k].get(x, y)[ch] - expect).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn oracle_monotone_in_strength() {
        let t = truth(1, 8, 6);
        let mut prev = f64::INFINITY;
        for s in [0.0, 0.2, 0.5, 0.9, 1.0] {
            let mut r = request(1, 8, 6, |x, y| (x + y) % 2 == 0);
            r.strength = s;
            let out = restore_oracle(&r, &t).unwrap();
            let d: f64 = out[0].data.iter().zip(&t[0].data).map(|(a, b)| (a - b).abs()).sum();
            assert!(d <= prev);
            prev = d;
        }
    }

    #[test]
    fn noisy_oracle_contract() {
        let (w, h) = (96, 64);
        let r = request(1, w, h, |x, _| x >= w / 2);
        let t = vec![ImageRgb::filled(w, h, [0.5; 3])];
        let mut r0 = r.clone();
        r0.frames = vec![ImageRgb::filled(w, h, [0.5; 3])];
        assert_eq!(restore_noisy_oracle(&r0, &t, 0.0).unwrap(), restore_oracle(&r0, &t).unwrap());
        let level = 0.2;
        let out = restore_noisy_oracle(&r0, &t, level).unwrap();
        let mut samples = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if x < w / 2 {
                    assert_eq!(out[0].get(x, y), r0.frames[0].get(x, y));
                } else {
                    samples.extend(out[0].get(x, y).iter().map(|v| v - 0.5));
                }
            }
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std = math::sqrt(samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n);
        assert!((std / (level * NOISE_SIGMA_MAX) - 1.0).abs() < 0.02, "std {std}");
    }

    #[test]
    fn restorer_lookup() {
        assert_eq!(restorer_by_id("identity", None, 0.0).unwrap().id(), "identity");
        assert!(restorer_by_id("oracle", None, 0.0).is_err());
        assert!(restorer_by_id("diffusion", None, 0.0).is_err());
    }

    #[test]
    fn sampler_budget_and_patch_bounds() {
        let mut img = ImageRgb::new(40, 30);
        for y in 0..30 {
            for x in 0..40 {
                img.set(x, y, [math::sin(x as f64 * 0.7).abs(), 0.3, (y % 5) as f64 / 5.0]);
            }
        }
        let b = 20;
        let m = edge_aware_mask_sample(&img, b, 0.05, 3).unwrap();
        assert!((b..=9 * b).contains(&m.count()));
        assert_eq!(m, edge_aware_mask_sample(&img, b, 0.05, 3).unwrap());
        assert!(edge_aware_mask_sample(&img, 40 * 30 + 1, 0.05, 3).is_err());
        assert!(edge_aware_mask_sample(&img, 0, 0.05, 3).is_err());
    }

    #[test]
    fn single_edge_zero_baseline() {
        let mut img = ImageRgb::filled(20, 16, [0.1; 3]);
        for y in 0..16 {
            for x in 10..20 {
                img.set(x, y, [0.9; 3]);
            }
        }
        for seed in 0..50 {
            for i in edge_aware_sample_centers(&img, 8, 0.0, seed).unwrap() {
                assert!(i % 20 == 9 || i % 20 == 10);
            }
        }
    }
}
