//! Loader for the `key = value` constants file shipped in `data/constants.txt`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ephemeris::{EphemerisConfig, KeplerOrbit};
use crate::error::{Error, Result};

/// The constants file bundled with the crate.
pub const DEFAULT_CONSTANTS: &str = include_str!("../../data/constants.txt");

const SUPPORTED_FORMAT: u32 = 1;

/// Physical constants in physical units (km, s, rad).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub mu_moon: f64,
    pub mu_earth: f64,
    pub mu_sun: f64,
    pub j2_moon: f64,
    /// Lunar equatorial radius (km).
    pub r_moon: f64,
    /// Solar radiation pressure at 1 AU (N/m^2).
    pub p_sun: f64,
    /// Canonical length unit (km).
    pub length_unit: f64,
    pub ephemeris: EphemerisConfig,
}

impl Default for Constants {
    fn default() -> Self {
        Self::parse(DEFAULT_CONSTANTS).expect("bundled constants file is valid")
    }
}

impl Constants {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", lineno + 1)))?;
            let value: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: `{}` is not a number", lineno + 1, v.trim())))?;
            if kv.insert(k.trim().to_string(), value).is_some() {
                return Err(Error::Parse(format!("line {}: duplicate key `{}`", lineno + 1, k.trim())));
            }
        }

        let mut take = |key: &str| -> Result<f64> {
            kv.remove(key)
                .ok_or_else(|| Error::Parse(format!("missing key `{key}`")))
        };

        let version = take("format_version")?;
        if version != SUPPORTED_FORMAT as f64 {
            return Err(Error::Parse(format!("unsupported constants format_version {version}")));
        }
        let mu_moon = take("mu_moon")?;
        let mu_earth = take("mu_earth")?;
        let mu_sun = take("mu_sun")?;
        let mut orbit = |prefix: &str, mu: f64| -> Result<KeplerOrbit> {
            Ok(KeplerOrbit {
                mu,
                sma: take(&format!("{prefix}.sma"))?,
                ecc: take(&format!("{prefix}.ecc"))?,
                inc: take(&format!("{prefix}.inc"))?,
                raan: take(&format!("{prefix}.raan"))?,
                argp: take(&format!("{prefix}.argp"))?,
                tp: take(&format!("{prefix}.tp"))?,
            })
        };
        let earth = orbit("earth", mu_earth + mu_moon)?;
        let sun = orbit("sun", mu_sun + mu_earth + mu_moon)?;
        let consts = Constants {
            mu_moon,
            mu_earth,
            mu_sun,
            j2_moon: take("j2_moon")?,
            r_moon: take("r_moon")?,
            p_sun: take("p_sun")?,
            length_unit: take("length_unit")?,
            ephemeris: EphemerisConfig {
                mu_moon,
                mu_earth,
                mu_sun,
                earth,
                sun,
                moon_pole_tilt: take("moon.pole_tilt")?,
            },
        };
        if let Some(k) = kv.keys().next() {
            return Err(Error::Parse(format!("unknown key `{k}`")));
        }
        consts.validate()?;
        Ok(consts)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("j2_moon", self.j2_moon),
            ("r_moon", self.r_moon),
            ("p_sun", self.p_sun),
            ("length_unit", self.length_unit),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        self.ephemeris.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_file_parses() {
        let c = Constants::default();
        assert_eq!(c.length_unit, 100_000.0);
        assert!((c.ephemeris.earth.mu - (c.mu_earth + c.mu_moon)).abs() < 1e-9);
    }

    #[test]
    fn unknown_and_missing_keys_rejected() {
        let extra = format!("{DEFAULT_CONSTANTS}\nbogus = 1\n");
        assert!(matches!(Constants::parse(&extra), Err(Error::Parse(_))));
        let missing = DEFAULT_CONSTANTS.replace("mu_sun =", "# mu_sun =");
        assert!(matches!(Constants::parse(&missing), Err(Error::Parse(_))));
        let dup = format!("{DEFAULT_CONSTANTS}\nmu_moon = 1\n");
        assert!(Constants::parse(&dup).is_err());
    }

    #[test]
    fn non_numeric_value_rejected() {
        let bad = DEFAULT_CONSTANTS.replace("j2_moon = ", "j2_moon = abc #");
        assert!(Constants::parse(&bad).is_err());
    }
}
