//! Analytic two-body ephemerides of the Earth and the Sun relative to the Moon.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::Epoch;
use crate::error::{Error, Result};

/// Perturbing bodies with an analytic ephemeris.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Body {
    Earth,
    Sun,
}

impl FromStr for Body {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "earth" => Ok(Body::Earth),
            "sun" => Ok(Body::Sun),
            other => Err(Error::invalid(format!("unknown body `{other}`"))),
        }
    }
}

impl fmt::Display for Body {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Body::Earth => f.write_str("earth"),
            Body::Sun => f.write_str("sun"),
        }
    }
}

/// Keplerian ellipse with a fixed orientation in the inertial frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeplerOrbit {
    /// Gravitational parameter of the relative two-body problem (km^3/s^2).
    pub mu: f64,
    /// Semi-major axis (km).
    pub sma: f64,
    pub ecc: f64,
    pub inc: f64,
    pub raan: f64,
    pub argp: f64,
    /// Epoch of periapsis passage (s past the reference epoch).
    pub tp: f64,
}

impl KeplerOrbit {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid("orbit gravitational parameter must be positive"));
        }
        if !(self.sma > 0.0 && self.sma.is_finite()) {
            return Err(Error::invalid("semi-major axis must be positive"));
        }
        if !(0.0..1.0).contains(&self.ecc) {
            return Err(Error::invalid("eccentricity must lie in [0, 1)"));
        }
        if ![self.inc, self.raan, self.argp, self.tp].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("orbit angles and epoch must be finite"));
        }
        Ok(())
    }

    pub fn mean_motion(&self) -> f64 {
        (self.mu / self.sma.powi(3)).sqrt()
    }

    pub fn period(&self) -> f64 {
        TAU / self.mean_motion()
    }

    pub fn mean_anomaly(&self, t: f64) -> f64 {
        self.mean_motion() * (t - self.tp)
    }

    fn orientation(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.raan)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), self.inc)
            * Rotation3::from_axis_angle(&Vector3::z_axis(), self.argp)
    }

    /// Unit vector toward periapsis.
    pub fn periapsis_direction(&self) -> Vector3<f64> {
        self.orientation() * Vector3::x()
    }

    /// Unit orbit normal.
    pub fn normal(&self) -> Vector3<f64> {
        self.orientation() * Vector3::z()
    }

    /// Position (km) and velocity (km/s) at `t` seconds past the reference epoch.
    pub fn state(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let e = self.ecc;
        let big_e = solve_kepler(self.mean_anomaly(t), e);
        let (sin_e, cos_e) = big_e.sin_cos();
        let b = self.sma * (1.0 - e * e).sqrt();
        let r = self.sma * (1.0 - e * cos_e);
        let n = self.mean_motion();
        let pos_pf = Vector3::new(self.sma * (cos_e - e), b * sin_e, 0.0);
        let e_dot = n * self.sma / r;
        let vel_pf = Vector3::new(-self.sma * sin_e * e_dot, b * cos_e * e_dot, 0.0);
        let rot = self.orientation();
        (rot * pos_pf, rot * vel_pf)
    }
}

/// Solves Kepler's equation `E - e sin E = M` for the eccentric anomaly.
pub fn solve_kepler(mean_anomaly: f64, ecc: f64) -> f64 {
    let m = wrap_pi(mean_anomaly);
    let mut big_e = if ecc < 0.8 { m } else { std::f64::consts::PI.copysign(m) };
    for _ in 0..50 {
        let f = big_e - ecc * big_e.sin() - m;
        let step = f / (1.0 - ecc * big_e.cos());
        big_e -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    big_e
}

fn wrap_pi(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > std::f64::consts::PI {
        w - TAU
    } else {
        w
    }
}

/// Gravitational parameters and orbital elements for the analytic ephemerides.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EphemerisConfig {
    pub mu_moon: f64,
    pub mu_earth: f64,
    pub mu_sun: f64,
    /// Earth relative to the Moon.
    pub earth: KeplerOrbit,
    /// Earth-Moon barycenter relative to the Sun.
    pub sun: KeplerOrbit,
    /// Tilt of the lunar pole away from the orbit normal (rad).
    pub moon_pole_tilt: f64,
}

impl EphemerisConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, mu) in [
            ("mu_moon", self.mu_moon),
            ("mu_earth", self.mu_earth),
            ("mu_sun", self.mu_sun),
        ] {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        self.earth.validate()?;
        self.sun.validate()?;
        if !self.moon_pole_tilt.is_finite() {
            return Err(Error::invalid("moon_pole_tilt must be finite"));
        }
        Ok(())
    }

    /// Sidereal period of the Earth-Moon orbit (s).
    pub fn earth_moon_period(&self) -> f64 {
        self.earth.period()
    }

    /// Synodic month (s): Sun-relative period of the Earth-Moon line.
    pub fn synodic_period(&self) -> f64 {
        1.0 / (1.0 / self.earth.period() - 1.0 / self.sun.period())
    }

    /// Sun position relative to the Earth-Moon barycenter (km), the periodic part
    /// of the solar ephemeris.
    pub fn sun_from_barycenter(&self, epoch: Epoch) -> (Vector3<f64>, Vector3<f64>) {
        let (p, v) = self.sun.state(epoch.seconds());
        (-p, -v)
    }

    /// Position (km) and velocity (km/s) of `body` relative to the Moon.
    pub fn body_state(&self, body: Body, epoch: Epoch) -> (Vector3<f64>, Vector3<f64>) {
        match body {
            Body::Earth => self.earth.state(epoch.seconds()),
            Body::Sun => {
                let (pe, ve) = self.earth.state(epoch.seconds());
                let (ps, vs) = self.sun_from_barycenter(epoch);
                // The barycenter sits at mu_earth / (mu_earth + mu_moon) along the Moon->Earth line.
                let k = self.mu_earth / (self.mu_earth + self.mu_moon);
                (ps + pe * k, vs + ve * k)
            }
        }
    }
}

/// Position of `body` relative to the Moon (km, inertial).
pub fn body_position(body: Body, epoch: Epoch, cfg: &EphemerisConfig) -> Vector3<f64> {
    cfg.body_state(body, epoch).0
}
