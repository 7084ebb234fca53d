//! Scenario files: one TOML document configuring every pipeline stage.
//!
//! Every section is optional and falls back to defaults; unknown keys are
//! rejected. A single top-level `seed` feeds all stages through
//! [`derive_seed`].

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approximator::TrainSettings;
use crate::dataset::{Subsample, SweepGrid};
use crate::error::{Error, Result};
use crate::geometry;
use crate::optimizer::{FixedParams, OptimizerSettings};
use crate::radio::{ArrayConfig, LinkBudget};
use crate::simulator::{LoadModel, NetworkScenario, ParameterBounds};

/// Pipeline stages that draw randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulation = 1,
    Subsample = 2,
    Training = 3,
    Optimizer = 4,
}

/// Independent sub-seed for `stage`, a pure function of the master seed.
pub fn derive_seed(master: u64, stage: Stage) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stage as u64);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub aircraft_per_drop: usize,
    pub n_drops: usize,
    pub percentile: f64,
    pub altitude_m: f64,
    pub bs_height_m: f64,
    pub single_site: bool,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            aircraft_per_drop: 100,
            n_drops: 20,
            percentile: 50.0,
            altitude_m: geometry::DEFAULT_ALTITUDE_M,
            bs_height_m: geometry::DEFAULT_BS_HEIGHT_M,
            single_site: false,
        }
    }
}

/// Grid axes; omitted axes take the sector-dependent defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub isd_km: Option<Vec<f64>>,
    pub tilt_deg: Option<Vec<f64>>,
    pub load_mbps: Option<Vec<f64>>,
    /// Evaluate only this many uniformly drawn grid points.
    pub subsample: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub hidden_width: Option<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub final_lr: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainSettings::default();
        Self {
            hidden_width: t.hidden_width,
            epochs: t.epochs,
            lr: t.lr,
            final_lr: t.final_lr,
            batch_size: t.batch_size,
            validation_fraction: t.validation_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub n: usize,
    pub tau: usize,
    pub k_max: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Assignments such as `"isd=80km"` or `"load=10"`.
    pub fix: Vec<String>,
    pub load_floor_mbps: Option<f64>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let o = OptimizerSettings::default();
        Self {
            n: o.n,
            tau: o.tau,
            k_max: o.k_max,
            lr: o.lr,
            max_epochs: o.max_epochs,
            fix: Vec::new(),
            load_floor_mbps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioFile {
    pub sectors: usize,
    pub seed: u64,
    pub bounds: ParameterBounds,
    pub array: ArrayConfig,
    pub link: LinkBudget,
    pub load_model: LoadModel,
    pub simulation: SimulationSection,
    pub grid: GridSection,
    pub training: TrainingSection,
    pub optimizer: OptimizerSection,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        Self {
            sectors: 1,
            seed: 0,
            bounds: ParameterBounds::default(),
            array: ArrayConfig::default(),
            link: LinkBudget::default(),
            load_model: LoadModel::default(),
            simulation: SimulationSection::default(),
            grid: GridSection::default(),
            training: TrainingSection::default(),
            optimizer: OptimizerSection::default(),
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ScenarioFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| line_of(text, s.start));
            Error::parse(line, e.message().to_string())
        })?;
        file.network()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario values are always representable in TOML")
    }

    /// Validated simulator configuration.
    pub fn network(&self) -> Result<NetworkScenario> {
        let s = &self.simulation;
        let scenario = NetworkScenario {
            sectors: self.sectors,
            bs_height_m: s.bs_height_m,
            altitude_m: s.altitude_m,
            array: self.array.clone(),
            link: self.link.clone(),
            load_model: self.load_model.clone(),
            bounds: self.bounds.clone(),
            aircraft_per_drop: s.aircraft_per_drop,
            n_drops: s.n_drops,
            percentile: s.percentile,
            single_site: s.single_site,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn simulation_seed(&self) -> u64 {
        derive_seed(self.seed, Stage::Simulation)
    }

    pub fn sweep_grid(&self) -> SweepGrid {
        let mut grid = SweepGrid::default_for(self.sectors);
        if let Some(v) = &self.grid.isd_km {
            grid.isd_values_m = v.iter().map(|d| d * 1000.0).collect();
        }
        if let Some(v) = &self.grid.tilt_deg {
            grid.tilt_values_deg = v.clone();
        }
        if let Some(v) = &self.grid.load_mbps {
            grid.load_values_mbps = v.clone();
        }
        grid.subsample = self.grid.subsample.map(|count| Subsample {
            count,
            seed: derive_seed(self.seed, Stage::Subsample),
        });
        grid
    }

    pub fn train_settings(&self) -> TrainSettings {
        let t = &self.training;
        TrainSettings {
            hidden_width: t.hidden_width,
            epochs: t.epochs,
            lr: t.lr,
            final_lr: t.final_lr,
            batch_size: t.batch_size,
            validation_fraction: t.validation_fraction,
            seed: derive_seed(self.seed, Stage::Training),
        }
    }

    pub fn optimizer_settings(&self) -> OptimizerSettings {
        let o = &self.optimizer;
        OptimizerSettings {
            n: o.n,
            tau: o.tau,
            k_max: o.k_max,
            lr: o.lr,
            seed: derive_seed(self.seed, Stage::Optimizer),
            max_epochs: o.max_epochs,
            load_floor_mbps: o.load_floor_mbps,
        }
    }

    /// Fixed parameters from the file, followed by `extra` assignments.
    pub fn fixed_params(&self, extra: &[String]) -> Result<FixedParams> {
        let mut fixed = FixedParams::new();
        for a in self.optimizer.fix.iter().chain(extra) {
            fixed.parse_assignment(a, self.sectors)?;
        }
        Ok(fixed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let f = ScenarioFile::from_toml_str("").unwrap();
        assert_eq!(f, ScenarioFile::default());
        assert_eq!(f.network().unwrap(), NetworkScenario::new(1));
        assert_eq!(f.sweep_grid().cardinality(1), 608);
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let err = ScenarioFile::from_toml_str("sectors = 1\n\n[bounds]\ntheta_mx_deg = 80\n").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 4);
                assert!(message.contains("theta_mx_deg"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(ScenarioFile::from_toml_str("[simulation]\ndrops = 3\n").is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(matches!(ScenarioFile::from_toml_str("sectors = 2\n"), Err(Error::Config(_))));
        assert!(matches!(
            ScenarioFile::from_toml_str("[bounds]\ntheta_max_deg = 120\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sections_override_defaults() {
        let text = r#"
sectors = 3
seed = 7

[simulation]
n_drops = 2
aircraft_per_drop = 10

[grid]
isd_km = [20, 80]
tilt_deg = [0, 45]
subsample = 5

[optimizer]
fix = ["isd=80km"]
"#;
        let f = ScenarioFile::from_toml_str(text).unwrap();
        let grid = f.sweep_grid();
        assert_eq!(grid.isd_values_m, vec![20_000.0, 80_000.0]);
        assert_eq!(grid.cardinality(3), 2 * 8 * 4);
        assert_eq!(grid.subsample.unwrap().count, 5);
        assert_eq!(f.network().unwrap().n_drops, 2);
        let fixed = f.fixed_params(&["load=15".into()]).unwrap();
        assert_eq!(fixed.get(0), Some(80_000.0));
        assert_eq!(fixed.get(4), Some(15.0));
        let back = ScenarioFile::from_toml_str(&f.to_toml_string()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn stage_seeds_are_distinct_and_stable() {
        let stages = [Stage::Simulation, Stage::Subsample, Stage::Training, Stage::Optimizer];
        let a: Vec<u64> = stages.iter().map(|&s| derive_seed(5, s)).collect();
        let b: Vec<u64> = stages.iter().map(|&s| derive_seed(5, s)).collect();
        assert_eq!(a, b);
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                assert_ne!(a[i], a[j]);
            }
        }
        assert_ne!(derive_seed(5, Stage::Training), derive_seed(6, Stage::Training));
    }
}
