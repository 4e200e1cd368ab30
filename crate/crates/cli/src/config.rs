use std::path::Path;

use anyhow::{Context, Result};
use failsafe_core::dynamics::FaultVector;
use failsafe_core::scenario::ScenarioConfig;
use failsafe_core::tdm::Strategy;

/// Parse a complete scenario configuration from TOML text.
pub fn parse(text: &str) -> Result<ScenarioConfig> {
    Ok(toml::from_str(text)?)
}

pub fn load(path: &Path) -> Result<ScenarioConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn to_toml(config: &ScenarioConfig) -> Result<String> {
    Ok(toml::to_string(config)?)
}

/// One-off changes applied on top of a loaded configuration.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub name: Option<String>,
    pub strategy: Option<Strategy>,
    pub fault: Option<FaultVector>,
    pub reconfigure: Option<bool>,
}

impl Overrides {
    pub fn apply(&self, mut config: ScenarioConfig) -> ScenarioConfig {
        if let Some(name) = &self.name {
            config.name = name.clone();
        }
        if let Some(s) = self.strategy {
            config.strategy = s;
        }
        if let Some(f) = self.fault {
            config.plant_fault = f;
        }
        if let Some(r) = self.reconfigure {
            config.reconfigure = r;
        }
        config
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ScenarioConfig::default();
        let text = to_toml(&cfg).unwrap();
        assert_eq!(parse(&text).unwrap(), cfg);
    }

    #[test]
    fn missing_injection_time_means_fault_free() {
        let cfg = ScenarioConfig {
            fault_injection_time: None,
            ..ScenarioConfig::default()
        };
        let text = to_toml(&cfg).unwrap();
        assert!(!text.contains("fault_injection_time"));
        assert_eq!(parse(&text).unwrap().fault_injection_time, None);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = to_toml(&ScenarioConfig::default()).unwrap();
        let err = parse(&format!("bogus = 1\n{text}")).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn overrides_replace_only_given_fields() {
        let o = Overrides {
            strategy: Some(Strategy::BrakeOutOfLane),
            fault: Some(FaultVector::STEERING_HALF),
            ..Overrides::default()
        };
        let cfg = o.apply(ScenarioConfig::default());
        assert_eq!(cfg.strategy, Strategy::BrakeOutOfLane);
        assert_eq!(cfg.plant_fault, FaultVector::STEERING_HALF);
        assert!(!cfg.reconfigure);
        assert_eq!(cfg.name, "default");
    }
}
