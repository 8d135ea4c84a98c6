use std::path::PathBuf;

use gridvolt::simeng::{ControlMode, SimSettings};
use serde::{Deserialize, Serialize};

/// Parameters of a generated feeder, used when no network file is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeederSpec {
    pub buses: usize,
    pub spacing_km: f64,
    pub cable: String,
    pub customers_per_bus: usize,
    pub seed: u64,
}

impl Default for FeederSpec {
    fn default() -> Self {
        Self {
            buses: 30,
            spacing_km: 0.06,
            cable: "ow95".into(),
            customers_per_bus: 1,
            seed: 7,
        }
    }
}

/// Everything a command needs; read from `--config` and then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub network: Option<PathBuf>,
    pub feeder: FeederSpec,
    /// Replaces the cable of every line.
    pub cable: Option<String>,
    /// Directory holding `demand.csv` and `pv.csv`; synthetic profiles when absent.
    pub profiles: Option<PathBuf>,
    pub households: usize,
    pub profile_seed: u64,
    pub penetrations: Option<Vec<f64>>,
    pub modes: Option<Vec<ControlMode>>,
    /// Scenario id used by `run` and `validate`.
    pub scenario: usize,
    /// Random placements per level, in addition to the two clusters.
    pub scenarios: usize,
    pub scenario_seed: u64,
    pub jobs: Option<usize>,
    pub out: PathBuf,
    pub solver_log: bool,
    pub settings: SimSettings,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            network: None,
            feeder: FeederSpec::default(),
            cable: None,
            profiles: None,
            households: gridvolt::simeng::profiles::DEFAULT_HOUSEHOLDS,
            profile_seed: 11,
            penetrations: None,
            modes: None,
            scenario: 2,
            scenarios: 18,
            scenario_seed: 1,
            jobs: None,
            out: PathBuf::from("out"),
            solver_log: false,
            settings: SimSettings::default(),
        }
    }
}

impl Config {
    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
    }

    pub fn validate(&self) -> Result<(), String> {
        if let Some(p) = &self.penetrations {
            if p.is_empty() {
                return Err("penetration list is empty".into());
            }
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err("penetrations must lie in [0, 1]".into());
            }
        }
        if self.households == 0 {
            return Err("households must be positive".into());
        }
        if self.jobs == Some(0) {
            return Err("jobs must be positive".into());
        }
        if matches!(&self.modes, Some(m) if m.is_empty()) {
            return Err("mode list is empty".into());
        }
        self.settings.validate().map_err(|e| e.to_string())
    }
}
