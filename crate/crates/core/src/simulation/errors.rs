//! Error injection: maneuver execution, SRP mismodeling, and momentum
//! desaturation impulses. All configured values are 3σ.

use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErrorModelConfig {
    pub srp_am_sigma_pct: f64,
    pub srp_cr_sigma_pct: f64,
    pub desat_sigma_cms: f64,
    pub desat_anomalies_deg: Vec<f64>,
    pub dv_sigma_rel_pct: f64,
    pub dv_sigma_abs_mms: f64,
    pub dv_sigma_dir_deg: f64,
    pub init_pos_sigma_km: f64,
    pub init_vel_sigma_mms: f64,
    pub range_sigma_m: f64,
    pub range_rate_sigma_mms: f64,
}

impl Default for ErrorModelConfig {
    fn default() -> Self {
        ErrorModelConfig {
            srp_am_sigma_pct: 30.0,
            srp_cr_sigma_pct: 15.0,
            desat_sigma_cms: 1.0,
            desat_anomalies_deg: vec![0.0],
            dv_sigma_rel_pct: 1.5,
            dv_sigma_abs_mms: 1.42,
            dv_sigma_dir_deg: 1.0,
            init_pos_sigma_km: 10.0,
            init_vel_sigma_mms: 10.0,
            range_sigma_m: 1.0,
            range_rate_sigma_mms: 0.1,
        }
    }
}

impl ErrorModelConfig {
    /// Every error source disabled.
    pub fn zero() -> Self {
        ErrorModelConfig {
            srp_am_sigma_pct: 0.0,
            srp_cr_sigma_pct: 0.0,
            desat_sigma_cms: 0.0,
            desat_anomalies_deg: vec![],
            dv_sigma_rel_pct: 0.0,
            dv_sigma_abs_mms: 0.0,
            dv_sigma_dir_deg: 0.0,
            init_pos_sigma_km: 0.0,
            init_vel_sigma_mms: 0.0,
            range_sigma_m: 0.0,
            range_rate_sigma_mms: 0.0,
        }
    }

    /// Default noise with 1, 2, or 3 desaturation events per revolution.
    pub fn with_desat_events(n: usize) -> Result<Self> {
        let anomalies = match n {
            1 => vec![0.0],
            2 => vec![330.0, 0.0],
            3 => vec![330.0, 0.0, 30.0],
            _ => return Err(Error::invalid("desaturation event count must be 1, 2, or 3")),
        };
        Ok(ErrorModelConfig {
            desat_anomalies_deg: anomalies,
            ..Default::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.srp_am_sigma_pct,
            self.srp_cr_sigma_pct,
            self.desat_sigma_cms,
            self.dv_sigma_rel_pct,
            self.dv_sigma_abs_mms,
            self.dv_sigma_dir_deg,
            self.init_pos_sigma_km,
            self.init_vel_sigma_mms,
            self.range_sigma_m,
            self.range_rate_sigma_mms,
        ];
        if !sigmas.iter().all(|s| *s >= 0.0 && s.is_finite()) {
            return Err(Error::invalid("error-model sigmas must be non-negative and finite"));
        }
        if !self.desat_anomalies_deg.iter().all(|a| a.is_finite()) {
            return Err(Error::invalid("desaturation anomalies must be finite"));
        }
        Ok(())
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_vector(rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::from(UnitSphere.sample(rng))
}

/// Gates execution model on a commanded impulse in m/s.
///
/// The same number of random draws is taken whatever the sigmas, so
/// switching one source off does not reshuffle the others.
pub fn corrupt_maneuver(dv: &Vector3<f64>, err: &ErrorModelConfig, rng: &mut impl Rng) -> Vector3<f64> {
    let s_abs = err.dv_sigma_abs_mms * 1e-3 / 3.0;
    let s_rel = err.dv_sigma_rel_pct / 100.0 / 3.0;
    let s_dir = err.dv_sigma_dir_deg.to_radians() / 3.0;
    let (n_abs, n_rel, n_dir) = (normal(rng), normal(rng), normal(rng));
    let u = unit_vector(rng);
    let mag = dv.norm();
    if mag == 0.0 {
        return u * (s_abs * n_abs);
    }
    let scale = 1.0 + (s_abs * n_abs) / mag + s_rel * n_rel;
    let angle = s_dir * n_dir;
    if angle == 0.0 {
        return dv * scale;
    }
    let dir = dv / mag;
    let perp = u - dir * u.dot(&dir);
    let axis = if perp.norm() > 1e-12 {
        perp
    } else {
        dir.cross(&Vector3::x()).try_normalize(1e-6).unwrap_or_else(|| dir.cross(&Vector3::y()))
    };
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle) * dv * scale
}

/// Relative SRP perturbations (δ(A/m), δCr), drawn once per sample.
pub fn sample_srp_dispersion(err: &ErrorModelConfig, rng: &mut impl Rng) -> (f64, f64) {
    let am = normal(rng) * err.srp_am_sigma_pct / 100.0 / 3.0;
    let cr = normal(rng) * err.srp_cr_sigma_pct / 100.0 / 3.0;
    (am, cr)
}

/// Desaturation impulse (m/s): uniform direction, half-normal magnitude.
pub fn desaturation_impulse(err: &ErrorModelConfig, rng: &mut impl Rng) -> Vector3<f64> {
    let mag = (normal(rng) * err.desat_sigma_cms * 1e-2 / 3.0).abs();
    unit_vector(rng) * mag
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_sigmas_leave_everything_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = ErrorModelConfig::zero();
        let dv = Vector3::new(0.3, -0.2, 0.05);
        for _ in 0..10 {
            assert_eq!(corrupt_maneuver(&dv, &z, &mut rng), dv);
            assert_eq!(sample_srp_dispersion(&z, &mut rng), (0.0, 0.0));
            assert_eq!(desaturation_impulse(&z, &mut rng), Vector3::zeros());
        }
    }

    #[test]
    fn desat_presets_match_event_counts() {
        for n in 1..=3 {
            assert_eq!(ErrorModelConfig::with_desat_events(n).unwrap().desat_anomalies_deg.len(), n);
        }
        assert!(ErrorModelConfig::with_desat_events(4).is_err());
        let bad = ErrorModelConfig {
            range_sigma_m: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
