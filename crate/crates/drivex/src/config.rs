use std::path::{Path, PathBuf};

use drivex_core::synthworld::{CaptureSpec, WorldSpec};
use drivex_core::trainer::{InitConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats;

pub const CONFIG_ECHO: &str = "config.json";
pub const RESTORER_IDS: [&str; 3] = ["identity", "oracle", "noisy-oracle"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RestorerConfig {
    pub id: String,
    /// Noise standard deviation of `noisy-oracle`.
    pub noise_level: f64,
}

impl Default for RestorerConfig {
    fn default() -> Self {
        Self { id: "identity".into(), noise_level: 0.0 }
    }
}

/// Everything a command needs, loaded from JSON and then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub init: InitConfig,
    pub world: WorldSpec,
    pub capture: CaptureSpec,
    pub restorer: RestorerConfig,
    pub dataset: PathBuf,
    pub output: PathBuf,
    /// Shifts evaluated against stored novel ground truth.
    pub shifts: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            init: InitConfig::default(),
            world: WorldSpec::benchmark(0),
            capture: CaptureSpec::default(),
            restorer: RestorerConfig::default(),
            dataset: PathBuf::from("dataset"),
            output: PathBuf::from("run"),
            shifts: vec![1.0, 2.0, 3.0],
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = formats::read_bytes(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.world.validate()?;
        self.capture.validate()?;
        if self.world.frames < self.capture.frames {
            return Err(Error::Config(format!(
                "world has node poses for {} frames but the capture needs {}",
                self.world.frames, self.capture.frames
            )));
        }
        if !RESTORER_IDS.contains(&self.restorer.id.as_str()) {
            return Err(Error::Config(format!("unknown restorer {:?}, expected one of {RESTORER_IDS:?}", self.restorer.id)));
        }
        if !(0.0..=1.0).contains(&self.restorer.noise_level) {
            return Err(Error::Config("restorer noise_level must lie in [0, 1]".into()));
        }
        if self.shifts.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("shifts must be finite and non-negative".into()));
        }
        if !(self.init.voxel > 0.0 && self.init.scale > 0.0 && self.init.opacity > 0.0 && self.init.opacity < 1.0) {
            return Err(Error::Config("init needs positive voxel and scale and an opacity in (0, 1)".into()));
        }
        Ok(())
    }

    /// Writes the effective configuration into an output directory.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        formats::write_atomic(&dir.join(CONFIG_ECHO), self.to_json().as_bytes())
    }
}
