//! JSON run configuration with sections `sim`, `scenario`, `agent` and `training`.
//!
//! Every field has a default, so `{}` is a valid file and any subset of keys
//! may be given.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::DEFAULT_TTC_THRESHOLD;
use crate::ddpg::{AgentConfig, TrainingConfig};
use crate::env::{
    exploration_follower_policy, make_scenario, FollowerPolicy, ScenarioConfig, ScenarioId,
    ScenarioOverrides, DEFAULT_DT, DEFAULT_HORIZON,
};
use crate::estimation::KalmanParams;
use crate::{Error, Result};

/// Environment variable consulted when no seed is given on the command line or in the file.
pub const SEED_ENV: &str = "PLATOON_GUARD_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub horizon_steps: usize,
    pub oracle_sensing: bool,
    pub kalman: KalmanParams,
    pub ttc_threshold: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            horizon_steps: DEFAULT_HORIZON,
            oracle_sensing: false,
            kalman: KalmanParams::default(),
            ttc_threshold: DEFAULT_TTC_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// Distribution used in the exploitation stage of training.
    pub train: ScenarioId,
    /// Follower behaviour during the exploration stage.
    pub exploration_follower: FollowerPolicy,
    /// Applied on top of every scenario built from this file.
    pub overrides: ScenarioOverrides,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            train: ScenarioId::TrainRandom,
            exploration_follower: exploration_follower_policy(),
            overrides: ScenarioOverrides::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sim: SimSection,
    pub scenario: ScenarioSection,
    pub agent: AgentConfig,
    pub training: TrainingConfig,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::InvalidConfig(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        if self.training.moving_window == 0 {
            return Err(Error::InvalidConfig("moving_window must be positive".into()));
        }
        self.scenario(self.scenario.train)?;
        Ok(())
    }

    /// Scenario overrides with the `sim` section folded in. Explicit
    /// `scenario.overrides` entries win.
    pub fn overrides(&self) -> ScenarioOverrides {
        let mut o = self.scenario.overrides.clone();
        o.dt.get_or_insert(self.sim.dt);
        o.horizon_steps.get_or_insert(self.sim.horizon_steps);
        o.oracle_sensing.get_or_insert(self.sim.oracle_sensing);
        o.kalman.get_or_insert(self.sim.kalman);
        o.ttc_threshold.get_or_insert(self.sim.ttc_threshold);
        o
    }

    pub fn scenario(&self, id: ScenarioId) -> Result<ScenarioConfig> {
        make_scenario(id, &self.overrides())
    }

    /// `(exploration, exploitation)` scenarios for training.
    pub fn training_scenarios(&self) -> Result<(ScenarioConfig, ScenarioConfig)> {
        let exploit = self.scenario(self.scenario.train)?;
        let explore = ScenarioConfig {
            follower_policy: self.scenario.exploration_follower,
            ..exploit.clone()
        };
        explore.validate()?;
        Ok((explore, exploit))
    }

    /// Command line, then file, then [`SEED_ENV`], then 0.
    pub fn resolve_seed(&self, explicit: Option<u64>) -> Result<u64> {
        if let Some(s) = explicit.or(self.seed) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}=`{v}` is not an integer"))),
            Err(_) => Ok(0),
        }
    }
}
