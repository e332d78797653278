//! Declarative run configuration: one TOML file names the field source, the
//! regions, every algorithm's parameters, and the task batteries. Commands
//! only select a config file and names, so experiments are reproducible from
//! the file plus one root seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{AfsaCoef, DeCoef, GaCoef, MetaConfig, MetaMethod, PsoCoef};
use crate::distill::DistillConfig;
use crate::env::{EnvConfig, ObsNormalizer};
use crate::error::{Error, Result};
use crate::field::{DipoleField, DipoleFieldSpec, FieldGrid, FieldProvider};
use crate::geo::{GeoPoint, RegionBounds};
use crate::reward::RewardConfig;
use crate::td3::Td3Config;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSection {
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 42,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldSourceKind {
    Dipole,
    Grid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldSection {
    pub source: FieldSourceKind,
    #[serde(default)]
    pub grid_path: Option<PathBuf>,
    #[serde(default)]
    pub dipole: DipoleSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DipoleSection {
    pub moment_nt: f64,
    pub tilt_deg: f64,
    pub center_lon_deg: f64,
    pub center_lat_deg: f64,
}

impl Default for DipoleSection {
    fn default() -> Self {
        DipoleSection {
            moment_nt: 31000.0,
            tilt_deg: 11.0,
            center_lon_deg: 0.0,
            center_lat_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSection {
    pub d_min_km: f64,
    pub d_max_km: f64,
    /// Tasks must separate every element by at least this fraction of its
    /// span over the task region; keeps objective denominators healthy.
    #[serde(default = "default_min_deficit_frac")]
    pub min_deficit_frac: f64,
}

fn default_min_deficit_frac() -> f64 {
    0.05
}

impl Default for TaskSection {
    fn default() -> Self {
        TaskSection {
            d_min_km: 30.0,
            d_max_km: 50.0,
            min_deficit_frac: default_min_deficit_frac(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatterySection {
    /// Named region the tasks are drawn from.
    pub region: String,
    pub n_tasks: usize,
    #[serde(default = "default_battery_d_min")]
    pub d_min_km: f64,
    #[serde(default = "default_battery_d_max")]
    pub d_max_km: f64,
}

fn default_battery_d_min() -> f64 {
    30.0
}

fn default_battery_d_max() -> f64 {
    50.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineSection {
    #[serde(default = "default_population")]
    pub population: usize,
    #[serde(default = "default_iterations")]
    pub iterations_per_step: usize,
    #[serde(default = "default_probe")]
    pub probe_dist_km: f64,
    #[serde(default)]
    pub pso: PsoCoef,
    #[serde(default)]
    pub de: DeCoef,
    #[serde(default)]
    pub ga: GaCoef,
    #[serde(default)]
    pub afsa: AfsaCoef,
}

fn default_population() -> usize {
    30
}

fn default_iterations() -> usize {
    20
}

fn default_probe() -> f64 {
    5.0
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            population: default_population(),
            iterations_per_step: default_iterations(),
            probe_dist_km: default_probe(),
            pso: PsoCoef::default(),
            de: DeCoef::default(),
            ga: GaCoef::default(),
            afsa: AfsaCoef::default(),
        }
    }
}

fn default_lattice() -> usize {
    33
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizerSection {
    #[serde(default = "default_lattice")]
    pub lattice: usize,
}

impl Default for NormalizerSection {
    fn default() -> Self {
        NormalizerSection {
            lattice: default_lattice(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    pub field: FieldSection,
    pub super_region: RegionBounds,
    #[serde(default)]
    pub regions: BTreeMap<String, RegionBounds>,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub td3: Td3Config,
    #[serde(default)]
    pub tasks: TaskSection,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default)]
    pub baselines: BaselineSection,
    #[serde(default)]
    pub batteries: BTreeMap<String, BatterySection>,
    #[serde(default)]
    pub normalizer: NormalizerSection,
}

impl RunConfig {
    pub fn from_str_validated(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Toml {
            path: origin.to_string(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_str_validated(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.super_region.validate()?;
        for (name, region) in &self.regions {
            region.validate()?;
            if !self.super_region.contains_region(region) {
                return Err(Error::Config(format!(
                    "region {name} is not inside the super-region"
                )));
            }
        }
        for (name, battery) in &self.batteries {
            if !self.regions.contains_key(&battery.region) {
                return Err(Error::Config(format!(
                    "battery {name} references unknown region {}",
                    battery.region
                )));
            }
            if battery.n_tasks == 0 {
                return Err(Error::Config(format!("battery {name} has zero tasks")));
            }
        }
        if matches!(self.field.source, FieldSourceKind::Grid) && self.field.grid_path.is_none() {
            return Err(Error::Config(
                "field.source = \"grid\" requires field.grid_path".into(),
            ));
        }
        if !(self.env.zeta > 0.0) {
            return Err(Error::Config(format!(
                "env.zeta must be positive, got {}",
                self.env.zeta
            )));
        }
        Ok(())
    }

    pub fn region(&self, name: &str) -> Result<&RegionBounds> {
        self.regions
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown region name: {name}")))
    }

    pub fn battery(&self, name: &str) -> Result<&BatterySection> {
        self.batteries
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown battery name: {name}")))
    }

    pub fn meta_config(&self, method: MetaMethod) -> MetaConfig {
        MetaConfig {
            method,
            population: self.baselines.population,
            iterations_per_step: self.baselines.iterations_per_step,
            probe_dist_km: self.baselines.probe_dist_km,
            pso: self.baselines.pso,
            de: self.baselines.de,
            ga: self.baselines.ga,
            afsa: self.baselines.afsa,
        }
    }

    /// Build the field provider named by the config. Grid paths resolve
    /// relative to `base_dir` (usually the config file's directory).
    pub fn build_provider(&self, base_dir: &Path) -> Result<Box<dyn FieldProvider>> {
        match self.field.source {
            FieldSourceKind::Dipole => {
                let d = &self.field.dipole;
                Ok(Box::new(DipoleField::new(DipoleFieldSpec {
                    moment_nt: d.moment_nt,
                    tilt_deg: d.tilt_deg,
                    center: GeoPoint {
                        lon_deg: d.center_lon_deg,
                        lat_deg: d.center_lat_deg,
                    },
                })?))
            }
            FieldSourceKind::Grid => {
                let rel = self.field.grid_path.as_ref().unwrap();
                let path = if rel.is_absolute() {
                    rel.clone()
                } else {
                    base_dir.join(rel)
                };
                Ok(Box::new(FieldGrid::load_csv(path)?))
            }
        }
    }
}

/// A loaded config plus the provider and normalizer built from it.
pub struct RunContext {
    pub config: RunConfig,
    pub provider: Box<dyn FieldProvider>,
    pub normalizer: ObsNormalizer,
    pub base_dir: PathBuf,
}

impl RunContext {
    pub fn load(config_path: impl AsRef<Path>) -> Result<Self> {
        let config_path = config_path.as_ref();
        let config = RunConfig::load(config_path)?;
        let base_dir = config_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .to_path_buf();
        Self::from_config(config, base_dir)
    }

    pub fn from_config(config: RunConfig, base_dir: PathBuf) -> Result<Self> {
        let provider = config.build_provider(&base_dir)?;
        if !provider.coverage().contains_region(&config.super_region) {
            return Err(Error::Config(
                "super-region is not inside the field coverage".into(),
            ));
        }
        let normalizer = ObsNormalizer::fit(
            provider.as_ref(),
            &config.super_region,
            config.normalizer.lattice,
        )?;
        Ok(RunContext {
            config,
            provider,
            normalizer,
            base_dir,
        })
    }

    /// Output root: `GEONAV_OUT` overrides the config's `run.out_dir`.
    pub fn out_root(&self) -> PathBuf {
        match std::env::var_os("GEONAV_OUT") {
            Some(dir) => PathBuf::from(dir),
            None => {
                if self.config.run.out_dir.is_absolute() {
                    self.config.run.out_dir.clone()
                } else {
                    self.base_dir.join(&self.config.run.out_dir)
                }
            }
        }
    }
}

/// The reproduction layout used across the examples and scenario configs:
/// four 5-degree corner training regions inside a 45x25-degree super-region.
pub const REPRO_CONFIG_TOML: &str = r#"
[run]
seed = 42
out_dir = "out"

[field]
source = "dipole"

[field.dipole]
moment_nt = 31000.0
tilt_deg = 11.0
center_lon_deg = 0.0
center_lat_deg = 0.0

[super_region]
lon_min = 90.0
lon_max = 135.0
lat_min = -35.0
lat_max = -10.0

[regions.A]
lon_min = 90.0
lon_max = 95.0
lat_min = -15.0
lat_max = -10.0

[regions.B]
lon_min = 130.0
lon_max = 135.0
lat_min = -15.0
lat_max = -10.0

[regions.C]
lon_min = 90.0
lon_max = 95.0
lat_min = -35.0
lat_max = -30.0

[regions.D]
lon_min = 130.0
lon_max = 135.0
lat_min = -35.0
lat_max = -30.0

[batteries.home_A]
region = "A"
n_tasks = 200

[batteries.home_B]
region = "B"
n_tasks = 200

[batteries.home_C]
region = "C"
n_tasks = 200

[batteries.home_D]
region = "D"
n_tasks = 200
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repro_config_parses_and_validates() {
        let cfg = RunConfig::from_str_validated(REPRO_CONFIG_TOML, "embedded").unwrap();
        assert_eq!(cfg.regions.len(), 4);
        assert_eq!(cfg.run.seed, 42);
        assert!((cfg.env.zeta - 0.05).abs() < 1e-12);
        assert_eq!(cfg.td3.batch, 256);
        assert!((cfg.td3.gamma - 0.995).abs() < 1e-12);
        assert_eq!(cfg.td3.replay_capacity, 50_000);
        assert!((cfg.reward.r_goal - 200.0).abs() < 1e-12);
        let ctx = RunContext::from_config(cfg, PathBuf::from(".")).unwrap();
        assert!(ctx.provider.coverage().contains_region(&ctx.config.super_region));
    }

    #[test]
    fn bad_configs_are_named() {
        let bad_region = r#"
[field]
source = "dipole"
[super_region]
lon_min = 90.0
lon_max = 135.0
lat_min = -35.0
lat_max = -10.0
[regions.X]
lon_min = 10.0
lon_max = 15.0
lat_min = -15.0
lat_max = -10.0
"#;
        let err = RunConfig::from_str_validated(bad_region, "test").unwrap_err();
        assert!(err.to_string().contains("X"));

        let bad_battery = r#"
[field]
source = "dipole"
[super_region]
lon_min = 90.0
lon_max = 135.0
lat_min = -35.0
lat_max = -10.0
[batteries.b]
region = "nope"
n_tasks = 10
"#;
        let err = RunConfig::from_str_validated(bad_battery, "test").unwrap_err();
        assert!(err.to_string().contains("nope"));

        let grid_missing = r#"
[field]
source = "grid"
[super_region]
lon_min = 90.0
lon_max = 135.0
lat_min = -35.0
lat_max = -10.0
"#;
        assert!(RunConfig::from_str_validated(grid_missing, "test").is_err());
    }

    #[test]
    fn env_override_for_out_root() {
        let cfg = RunConfig::from_str_validated(REPRO_CONFIG_TOML, "embedded").unwrap();
        let ctx = RunContext::from_config(cfg, PathBuf::from("/tmp/cfgdir")).unwrap();
        std::env::remove_var("GEONAV_OUT");
        assert_eq!(ctx.out_root(), PathBuf::from("/tmp/cfgdir/out"));
        std::env::set_var("GEONAV_OUT", "/tmp/elsewhere");
        assert_eq!(ctx.out_root(), PathBuf::from("/tmp/elsewhere"));
        std::env::remove_var("GEONAV_OUT");
    }
}
