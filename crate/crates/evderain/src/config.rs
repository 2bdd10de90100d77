//! The run configuration file.
//!
//! Every section is optional and falls back to its defaults; unknown keys
//! anywhere in the document are rejected. Relative paths are taken as
//! given, i.e. relative to the working directory of the process.

use std::path::{Path, PathBuf};

use evderain_core::baselines::FilterConfig;
use evderain_core::events::WindowSpec;
use evderain_core::loss_metrics::LossConfig;
use evderain_core::model::NetworkConfig;
use evderain_core::raingen::{KnnRadius, RainParams, SceneParams, DEFAULT_K};
use evderain_core::train::OptimConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Format;

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "EVDERAIN_SEED";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Vec<PathBuf>,
    pub val: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    /// Seconds per window.
    pub duration: f64,
    pub count: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            duration: 0.1,
            count: 5,
        }
    }
}

/// Sensor size assumed for CSV files, which do not record one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub width: u32,
    pub height: u32,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig { width: 64, height: 48 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    pub k: usize,
    pub radius_px: u32,
    pub radius_us: u64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        let r = KnnRadius::default();
        KnnConfig {
            k: DEFAULT_K,
            radius_px: r.pixels,
            radius_us: r.micros,
        }
    }
}

impl KnnConfig {
    pub fn radius(&self) -> KnnRadius {
        KnnRadius {
            pixels: self.radius_px,
            micros: self.radius_us,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub scene: SceneParams,
    /// `rain.seed` is ignored: sequence `i` uses the run seed plus `i`.
    pub rain: RainParams,
    pub sequences: usize,
    pub format: Format,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            scene: SceneParams::default(),
            rain: RainParams::default(),
            sequences: 1,
            format: Format::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub optim: OptimConfig,
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub window: WindowConfig,
    pub sensor: SensorConfig,
    pub seed: u64,
    pub filters: FilterConfig,
    pub knn: KnnConfig,
    pub generate: GenerateConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Loads `path` if given, otherwise the defaults, then applies
    /// [`SEED_ENV`].
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = seed_from_env()? {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    pub fn window_spec(&self, sensor: Option<(u32, u32)>) -> WindowSpec {
        let (w, h) = sensor.unwrap_or((self.sensor.width, self.sensor.height));
        WindowSpec {
            sensor_width: w,
            sensor_height: h,
            window_duration: self.window.duration,
            num_windows: self.window.count,
        }
    }

    /// Checks value ranges that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        let invalid = |e: evderain_core::Error| Error::Config {
            path: PathBuf::from("<config>"),
            reason: e.to_string(),
        };
        self.optim.validate().map_err(invalid)?;
        self.network.validate().map_err(invalid)?;
        self.loss.validate().map_err(invalid)?;
        self.filters.validate().map_err(invalid)?;
        if !(self.window.duration > 0.0) || self.window.count == 0 {
            return Err(Error::Config {
                path: PathBuf::from("<config>"),
                reason: format!("window needs duration > 0 and count >= 1: {:?}", self.window),
            });
        }
        if self.network.stdf.window_embed < self.window.count {
            return Err(Error::Config {
                path: PathBuf::from("<config>"),
                reason: format!(
                    "network.stdf.window_embed ({}) must be at least window.count ({})",
                    self.network.stdf.window_embed, self.window.count
                ),
            });
        }
        Ok(())
    }
}

fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Error::Config {
            path: PathBuf::from(format!("${SEED_ENV}")),
            reason: format!("`{v}` is not an unsigned integer"),
        }),
        Err(_) => Ok(None),
    }
}
