use serde::{Deserialize, Serialize};

use crate::dynamics::StateVector;
use crate::error::{Error, Result};

/// Length, velocity, and time units that normalize the lunar two-body problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalScales {
    /// Length unit (km).
    pub lu: f64,
    /// Velocity unit (km/s).
    pub vu: f64,
    /// Time unit (s).
    pub tu: f64,
    /// Moon gravitational parameter in canonical units; 1 by construction.
    pub mu_canonical: f64,
}

/// Builds canonical scales from the central body's `mu` (km^3/s^2) and a length unit (km).
pub fn make_canonical_scales(mu: f64, lu: f64) -> Result<CanonicalScales> {
    if !(mu > 0.0 && mu.is_finite()) || !(lu > 0.0 && lu.is_finite()) {
        return Err(Error::invalid("canonical scales need positive mu and length unit"));
    }
    let vu = (mu / lu).sqrt();
    let tu = lu / vu;
    Ok(CanonicalScales {
        lu,
        vu,
        tu,
        mu_canonical: mu * tu * tu / (lu * lu * lu),
    })
}

impl CanonicalScales {
    /// Acceleration unit (km/s^2).
    pub fn au(&self) -> f64 {
        self.vu / self.tu
    }

    /// Gravitational parameter (km^3/s^2) to canonical units.
    pub fn mu_to_canonical(&self, mu: f64) -> f64 {
        mu * self.tu * self.tu / self.lu.powi(3)
    }

    pub fn to_canonical(&self, x: &StateVector) -> StateVector {
        StateVector::new(x.r / self.lu, x.v / self.vu)
    }

    pub fn from_canonical(&self, x: &StateVector) -> StateVector {
        StateVector::new(x.r * self.lu, x.v * self.vu)
    }

    pub fn time_to_canonical(&self, seconds: f64) -> f64 {
        seconds / self.tu
    }

    pub fn time_from_canonical(&self, t: f64) -> f64 {
        t * self.tu
    }

    /// km/s to canonical velocity.
    pub fn speed_to_canonical(&self, kms: f64) -> f64 {
        kms / self.vu
    }

    /// km to canonical length.
    pub fn length_to_canonical(&self, km: f64) -> f64 {
        km / self.lu
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::Constants;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    #[test]
    fn default_length_unit_gives_expected_velocity_unit() {
        let c = Constants::default();
        let s = make_canonical_scales(c.mu_moon, 100_000.0).unwrap();
        assert!((s.vu - (c.mu_moon / 1e5).sqrt()).abs() < 1e-15);
        assert!((s.tu - 1e5 / s.vu).abs() < 1e-9);
        assert!((s.mu_canonical - 1.0).abs() < 1e-14);
    }

    #[test]
    fn unit_velocity_when_lu_equals_mu() {
        let s = make_canonical_scales(4902.8, 4902.8).unwrap();
        assert!((s.vu - 1.0).abs() < 1e-15);
    }

    #[test]
    fn non_positive_inputs_rejected() {
        assert!(make_canonical_scales(0.0, 1.0).is_err());
        assert!(make_canonical_scales(1.0, -1.0).is_err());
        assert!(make_canonical_scales(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn zero_and_unit_states() {
        let s = make_canonical_scales(4902.8, 1e5).unwrap();
        let z = StateVector::zeros();
        assert_eq!(s.to_canonical(&z), z);
        let x = StateVector::new(Vector3::new(0.0, 1e5, 0.0), Vector3::zeros());
        assert!((s.to_canonical(&x).r.norm() - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn scaling_round_trip(
            rx in -1e6f64..1e6, ry in -1e6f64..1e6, rz in -1e6f64..1e6,
            vx in -5f64..5.0, vy in -5f64..5.0, vz in -5f64..5.0,
            lu in 1e3f64..1e6,
        ) {
            let s = make_canonical_scales(4902.800066, lu).unwrap();
            let x = StateVector::new(Vector3::new(rx, ry, rz), Vector3::new(vx, vy, vz));
            let back = s.from_canonical(&s.to_canonical(&x));
            prop_assert!((back.r - x.r).norm() <= 1e-14 * x.r.norm().max(1e-300));
            prop_assert!((back.v - x.v).norm() <= 1e-14 * x.v.norm().max(1e-300));
        }
    }
}
