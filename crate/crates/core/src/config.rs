//! Configuration files.
//!
//! One TOML format serves every subcommand. All sections are optional and
//! fall back to their defaults, so a file names only what it changes:
//!
//! ```toml
//! [scenario]
//! level = 3
//! automation = 0.5
//!
//! [td3]
//! total_steps = 100000
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::driver::DriverSettings;
use crate::eval::CampaignSpec;
use crate::reward::RewardWeights;
use crate::td3::Td3Config;
use crate::world::{PerApproach, ScenarioConfig, TurnDist};
use crate::{Error, Result};

/// `[scenario]` section: a demand preset plus optional overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// Demand preset (1..=5, light to heavy) the scenario starts from.
    pub level: usize,
    /// Probability that a spawned vehicle is automated.
    pub automation: f64,
    /// Explicit spawn rates (veh/s per approach) replacing the preset's.
    pub demand: Option<PerApproach<f64>>,
    /// Explicit turn mix per approach replacing the uniform default.
    pub turns: Option<PerApproach<TurnDist>>,
}

impl Default for ScenarioSection {
    fn default() -> ScenarioSection {
        ScenarioSection { level: 1, automation: 0.5, demand: None, turns: None }
    }
}

impl ScenarioSection {
    pub fn build(&self) -> Result<ScenarioConfig> {
        if !(1..=5).contains(&self.level) {
            return Err(Error::input(format!("scenario level {} outside 1..=5", self.level)));
        }
        if !(0.0..=1.0).contains(&self.automation) {
            return Err(Error::input(format!("automation {} outside [0, 1]", self.automation)));
        }
        let mut cfg = ScenarioConfig::demand_level(self.level).with_automation(self.automation);
        if let Some(d) = self.demand {
            cfg.demand = d;
        }
        if let Some(t) = self.turns {
            cfg.turns = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A whole configuration file. Unknown section names are rejected so typos
/// fail loudly instead of silently running defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub scenario: ScenarioSection,
    pub driver: DriverSettings,
    pub reward: RewardWeights,
    pub td3: Td3Config,
    pub campaign: CampaignSpec,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        FileConfig::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<FileConfig> {
        let cfg: FileConfig =
            toml::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.build()?;
        self.reward.validate()?;
        self.td3.validate()?;
        self.campaign.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn empty_file_is_all_defaults() {
        let cfg = FileConfig::parse("", Path::new("empty.cfg")).unwrap();
        let scenario = cfg.scenario.build().unwrap();
        assert_eq!(scenario, ScenarioConfig::demand_level(1));
        assert_eq!(cfg.td3.policy_delay, Td3Config::default().policy_delay);
        assert_eq!(cfg.campaign.runs, 10);
    }

    #[test]
    fn sections_override_selected_fields_only() {
        let text = "\
[scenario]
level = 3
automation = 0.8

[td3]
total_steps = 5000
hidden_width = 16

[campaign]
scenarios = [2, 4]
runs = 3
noise = false
";
        let cfg = FileConfig::parse(text, Path::new("t.cfg")).unwrap();
        let scenario = cfg.scenario.build().unwrap();
        assert_abs_diff_eq!(scenario.automation_level, 0.8);
        assert_abs_diff_eq!(scenario.demand.east, 0.20);
        assert_eq!(cfg.td3.total_steps, 5000);
        assert_eq!(cfg.td3.hidden_width, 16);
        assert_abs_diff_eq!(cfg.td3.gamma, 0.99);
        assert_eq!(cfg.campaign.scenarios, vec![2, 4]);
        assert_eq!(cfg.campaign.runs, 3);
        assert!(!cfg.campaign.noise);
    }

    #[test]
    fn explicit_demand_replaces_the_preset() {
        let text = "\
[scenario]
level = 2
demand = { north = 0.0, east = 0.0, south = 0.0, west = 0.0 }
";
        let cfg = FileConfig::parse(text, Path::new("z.cfg")).unwrap();
        let scenario = cfg.scenario.build().unwrap();
        assert_abs_diff_eq!(scenario.demand.east, 0.0);
        assert_abs_diff_eq!(scenario.demand.north, 0.0);
    }

    #[test]
    fn unknown_sections_and_bad_values_are_rejected() {
        assert!(FileConfig::parse("[scnario]\nlevel = 1\n", Path::new("x.cfg")).is_err());
        assert!(FileConfig::parse("[scenario]\nlevel = 9\n", Path::new("x.cfg")).is_err());
        assert!(FileConfig::parse("[td3]\ngamma = 1.5\n", Path::new("x.cfg")).is_err());
        let err = FileConfig::parse("not toml ===", Path::new("bad.cfg")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "syntax errors surface as parse errors");
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = FileConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back = FileConfig::parse(&text, Path::new("rt.cfg")).unwrap();
        assert_eq!(back.campaign, cfg.campaign);
        assert_eq!(back.scenario, cfg.scenario);
    }
}
