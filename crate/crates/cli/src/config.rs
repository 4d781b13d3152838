//! The JSON configuration file. Every key is optional; unknown keys are
//! rejected so typos surface before any computation starts.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use nrhosk::baseline::{BaselineConfig, BaselineOrbit};
use nrhosk::dynamics::{Dynamics, SpacecraftParams};
use nrhosk::propagation::IntegratorConfig;
use nrhosk::simulation::ScenarioConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    /// Baseline file read by `run` and `monte-carlo`, written by
    /// `generate-baseline`. Relative to the working directory.
    pub baseline_path: PathBuf,
    pub baseline: BaselineConfig,
    /// Integrator used for baseline generation.
    pub baseline_integrator: IntegratorConfig,
    pub spacecraft: SpacecraftParams,
    pub scenario: ScenarioConfig,
    pub samples: usize,
    pub output_dir: PathBuf,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            baseline_path: PathBuf::from("baseline.nrho"),
            baseline: BaselineConfig::default(),
            baseline_integrator: IntegratorConfig::default(),
            spacecraft: SpacecraftParams::default(),
            scenario: ScenarioConfig::default(),
            samples: 10,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg: CliConfig = match path {
            None => CliConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("invalid config {}", p.display()))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            bail!("samples must be at least 1");
        }
        self.baseline.validate()?;
        self.baseline_integrator.validate()?;
        self.spacecraft.validate()?;
        self.scenario.validate()?;
        Ok(())
    }

    pub fn dynamics(&self) -> Result<Dynamics> {
        Ok(Dynamics::nominal().with_spacecraft(self.spacecraft)?)
    }

    /// Loads the baseline, explaining how to create it when missing.
    pub fn load_baseline(&self, path: &Path) -> Result<BaselineOrbit> {
        if !path.exists() {
            bail!(
                "baseline file {} does not exist; create it with `nrhosk generate-baseline --output {}` \
                 (using the same --config)",
                path.display(),
                path.display()
            );
        }
        let b = BaselineOrbit::load(path).with_context(|| format!("cannot load baseline {}", path.display()))?;
        let m = &b.metadata;
        if m.area_to_mass != self.spacecraft.area_to_mass || m.cr != self.spacecraft.cr {
            bail!(
                "baseline {} was generated for area_to_mass {} and cr {}, but the config uses {} and {}; \
                 regenerate it with `nrhosk generate-baseline`",
                path.display(),
                m.area_to_mass,
                m.cr,
                self.spacecraft.area_to_mass,
                self.spacecraft.cr
            );
        }
        self.scenario.check_baseline(&b).with_context(|| {
            format!("baseline {} is too short; raise baseline.revolutions and regenerate it", path.display())
        })?;
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        let cfg: CliConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, CliConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        for doc in [
            r#"{"sample": 3}"#,
            r#"{"scenario": {"n_revs": 3}}"#,
            r#"{"scenario": {"errors": {"desat_sigma": 1.0}}}"#,
            r#"{"baseline": {"revs": 20}}"#,
        ] {
            assert!(serde_json::from_str::<CliConfig>(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn invalid_values_fail_validation() {
        let cfg: CliConfig = serde_json::from_str(r#"{"scenario": {"n_revolutions": 0}}"#).unwrap();
        assert!(cfg.validate().is_err());
        let cfg: CliConfig = serde_json::from_str(r#"{"samples": 0}"#).unwrap();
        assert!(cfg.validate().is_err());
    }
}
