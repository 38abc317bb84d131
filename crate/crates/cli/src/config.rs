//! Run configuration file.

use std::path::{Path, PathBuf};

use hexnav::fixtures::{AUGUST_HOURS, GULF_MINI_WIND_SEED};
use hexnav::hexworld::DEFAULT_CELL_SIZE_KM;
use hexnav::traffic::DEFAULT_RELIABILITY_LAMBDA;
use hexnav::EnvConfig;
use hexnav_learn::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub world: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub wind: Option<PathBuf>,
    pub tasks: Option<PathBuf>,
    pub trajectories: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    /// `[lon_min, lat_min, lon_max, lat_max]`.
    pub bbox: Option<[f64; 4]>,
    pub cell_size_km: f64,
    pub land_geojson: Option<PathBuf>,
    pub land_raster: Option<PathBuf>,
}

impl Default for WorldSection {
    fn default() -> Self {
        Self { bbox: None, cell_size_km: DEFAULT_CELL_SIZE_KM, land_geojson: None, land_raster: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindSection {
    pub start: String,
    pub hours: usize,
    pub seed: u64,
    /// m/s.
    pub base_speed: f64,
    /// m/s.
    pub gust: f64,
}

impl Default for WindSection {
    fn default() -> Self {
        Self { start: "2024-08-01T00:00:00Z".into(), hours: AUGUST_HOURS, seed: GULF_MINI_WIND_SEED, base_speed: 6.0, gust: 3.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub lambda: f64,
    /// Resampling interval applied before discretization; 0 disables it.
    pub resample_secs: f64,
}

impl Default for GraphSection {
    fn default() -> Self {
        Self { lambda: DEFAULT_RELIABILITY_LAMBDA, resample_secs: 60.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub episodes: usize,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { episodes: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub world: WorldSection,
    pub wind: WindSection,
    pub graph: GraphSection,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.env.validate().map_err(|e| e.to_string())?;
        cfg.train.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
