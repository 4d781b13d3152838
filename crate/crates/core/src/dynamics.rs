//! Moon-centered equations of motion with J2, Earth/Sun third-body, and SRP
//! perturbations, evaluated in canonical units.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{
    make_canonical_scales, pa_frame, Body, CanonicalScales, Constants, EphemerisConfig, Epoch,
};

/// Moon-centered inertial position and velocity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl StateVector {
    pub fn new(r: Vector3<f64>, v: Vector3<f64>) -> Self {
        StateVector { r, v }
    }

    pub fn zeros() -> Self {
        StateVector::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        StateVector::new(x.fixed_rows::<3>(0).into(), x.fixed_rows::<3>(3).into())
    }

    pub fn from_slice(x: &[f64]) -> Self {
        StateVector::new(
            Vector3::new(x[0], x[1], x[2]),
            Vector3::new(x[3], x[4], x[5]),
        )
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.r.x, self.r.y, self.r.z, self.v.x, self.v.y, self.v.z)
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.r.x, self.r.y, self.r.z, self.v.x, self.v.y, self.v.z]
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().chain(self.v.iter()).all(|c| c.is_finite())
    }
}

/// Spacecraft properties entering the SRP model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpacecraftParams {
    /// Area-to-mass ratio (m^2/kg).
    pub area_to_mass: f64,
    /// Radiation pressure coefficient.
    pub cr: f64,
}

impl Default for SpacecraftParams {
    fn default() -> Self {
        SpacecraftParams {
            area_to_mass: 315.0 / 17_900.0,
            cr: 2.0,
        }
    }
}

impl SpacecraftParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.area_to_mass > 0.0 && self.area_to_mass.is_finite()) {
            return Err(Error::invalid("area_to_mass must be positive"));
        }
        if !self.cr.is_finite() || self.cr < 0.0 {
            return Err(Error::invalid("cr must be finite and non-negative"));
        }
        if !(1.0..=2.0).contains(&self.cr) {
            log::debug!("radiation pressure coefficient {} outside the nominal [1, 2]", self.cr);
        }
        Ok(())
    }
}

/// Gravity and SRP constants rescaled to canonical units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GravityConstants {
    pub mu_moon: f64,
    pub mu_earth: f64,
    pub mu_sun: f64,
    pub j2_moon: f64,
    pub r_moon: f64,
    /// Solar pressure at the Earth's distance from the Sun, as a canonical
    /// acceleration per unit of (C_r * A/m) in m^2/kg.
    pub p_sun: f64,
}

/// Which perturbations are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForceToggles {
    pub j2: bool,
    pub earth: bool,
    pub sun: bool,
    pub srp: bool,
}

impl ForceToggles {
    pub const fn all() -> Self {
        ForceToggles {
            j2: true,
            earth: true,
            sun: true,
            srp: true,
        }
    }

    pub const fn kepler_only() -> Self {
        ForceToggles {
            j2: false,
            earth: false,
            sun: false,
            srp: false,
        }
    }

    /// Kepler, J2, and third-body gravity without SRP.
    pub const fn conservative() -> Self {
        ForceToggles {
            srp: false,
            ..Self::all()
        }
    }
}

impl Default for ForceToggles {
    fn default() -> Self {
        Self::all()
    }
}

/// Ephemeris-dependent quantities shared by all force terms at one epoch.
#[derive(Clone, Copy, Debug)]
pub struct Environment {
    /// Earth position relative to the Moon (LU).
    pub d_earth: Vector3<f64>,
    /// Sun position relative to the Moon (LU).
    pub d_sun: Vector3<f64>,
    /// Inertial -> principal axes.
    pub pa: Matrix3<f64>,
}

/// The force model: constants, ephemerides, spacecraft, and enabled terms.
///
/// States are canonical; epochs are physical seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct Dynamics {
    pub constants: Constants,
    pub scales: CanonicalScales,
    pub gravity: GravityConstants,
    pub spacecraft: SpacecraftParams,
    pub forces: ForceToggles,
}

impl Dynamics {
    pub fn new(constants: Constants, spacecraft: SpacecraftParams, forces: ForceToggles) -> Result<Self> {
        constants.validate()?;
        spacecraft.validate()?;
        let scales = make_canonical_scales(constants.mu_moon, constants.length_unit)?;
        // N/m^2 * m^2/kg = m/s^2 -> km/s^2 -> canonical.
        let p_sun = constants.p_sun / 1000.0 / scales.au();
        let gravity = GravityConstants {
            mu_moon: scales.mu_to_canonical(constants.mu_moon),
            mu_earth: scales.mu_to_canonical(constants.mu_earth),
            mu_sun: scales.mu_to_canonical(constants.mu_sun),
            j2_moon: constants.j2_moon,
            r_moon: constants.r_moon / scales.lu,
            p_sun,
        };
        Ok(Dynamics {
            constants,
            scales,
            gravity,
            spacecraft,
            forces,
        })
    }

    /// Default constants, nominal spacecraft, all forces.
    pub fn nominal() -> Self {
        Dynamics::new(Constants::default(), SpacecraftParams::default(), ForceToggles::all())
            .expect("default model is valid")
    }

    pub fn with_spacecraft(&self, spacecraft: SpacecraftParams) -> Result<Self> {
        Dynamics::new(self.constants, spacecraft, self.forces)
    }

    pub fn with_forces(&self, forces: ForceToggles) -> Self {
        Dynamics {
            forces,
            ..self.clone()
        }
    }

    pub fn ephemeris(&self) -> &EphemerisConfig {
        &self.constants.ephemeris
    }

    /// Epoch corresponding to a canonical time coordinate.
    pub fn epoch(&self, tau: f64) -> Epoch {
        Epoch::from_seconds(tau * self.scales.tu)
    }

    pub fn tau(&self, t: Epoch) -> f64 {
        t.seconds() / self.scales.tu
    }

    pub fn environment(&self, t: Epoch) -> Environment {
        let eph = self.ephemeris();
        let lu = self.scales.lu;
        let d_earth = if self.forces.earth || self.forces.srp {
            eph.body_state(Body::Earth, t).0 / lu
        } else {
            Vector3::zeros()
        };
        let d_sun = if self.forces.sun || self.forces.srp {
            eph.body_state(Body::Sun, t).0 / lu
        } else {
            Vector3::zeros()
        };
        let pa = if self.forces.j2 {
            pa_frame(t, eph).rotation
        } else {
            Matrix3::identity()
        };
        Environment { d_earth, d_sun, pa }
    }

    pub fn accel_kepler(&self, x: &StateVector) -> Result<Vector3<f64>> {
        let r = x.r.norm();
        if !(r > 0.0) {
            return Err(Error::Singularity("spacecraft at the Moon's center".into()));
        }
        Ok(-x.r * (self.gravity.mu_moon / (r * r * r)))
    }

    pub fn accel_j2(&self, x: &StateVector, t: Epoch) -> Result<Vector3<f64>> {
        self.accel_j2_env(x, &self.environment_j2(t))
    }

    fn environment_j2(&self, t: Epoch) -> Environment {
        Environment {
            d_earth: Vector3::zeros(),
            d_sun: Vector3::zeros(),
            pa: pa_frame(t, self.ephemeris()).rotation,
        }
    }

    fn accel_j2_env(&self, x: &StateVector, env: &Environment) -> Result<Vector3<f64>> {
        let p = env.pa * x.r;
        let r2 = p.norm_squared();
        if !(r2 > 0.0) {
            return Err(Error::Singularity("spacecraft at the Moon's center".into()));
        }
        let r = r2.sqrt();
        let g = &self.gravity;
        let k = -1.5 * g.mu_moon * g.j2_moon * g.r_moon * g.r_moon / (r2 * r2 * r);
        let s = 5.0 * p.z * p.z / r2;
        let a_pa = Vector3::new(k * (1.0 - s) * p.x, k * (1.0 - s) * p.y, k * (3.0 - s) * p.z);
        Ok(env.pa.transpose() * a_pa)
    }

    pub fn accel_third_body(&self, x: &StateVector, t: Epoch, body: Body) -> Result<Vector3<f64>> {
        let d = match body {
            Body::Earth => self.ephemeris().body_state(Body::Earth, t).0,
            Body::Sun => self.ephemeris().body_state(Body::Sun, t).0,
        } / self.scales.lu;
        let mu = match body {
            Body::Earth => self.gravity.mu_earth,
            Body::Sun => self.gravity.mu_sun,
        };
        third_body(x.r, d, mu)
    }

    pub fn accel_srp(&self, x: &StateVector, t: Epoch) -> Result<Vector3<f64>> {
        let eph = self.ephemeris();
        let lu = self.scales.lu;
        let env = Environment {
            d_earth: eph.body_state(Body::Earth, t).0 / lu,
            d_sun: eph.body_state(Body::Sun, t).0 / lu,
            pa: Matrix3::identity(),
        };
        self.accel_srp_env(x, &env)
    }

    fn srp_magnitude_factor(&self, env: &Environment, r_sun: f64) -> f64 {
        let reference = (env.d_earth - env.d_sun).norm();
        let sc = &self.spacecraft;
        self.gravity.p_sun * (reference / r_sun).powi(2) * sc.cr * sc.area_to_mass
    }

    fn accel_srp_env(&self, x: &StateVector, env: &Environment) -> Result<Vector3<f64>> {
        let rs = x.r - env.d_sun;
        let n = rs.norm();
        if !(n > 0.0) {
            return Err(Error::Singularity("spacecraft at the Sun's position".into()));
        }
        Ok(rs * (self.srp_magnitude_factor(env, n) / n))
    }

    /// Total acceleration, evaluated with a precomputed environment.
    pub fn accel_env(&self, x: &StateVector, env: &Environment) -> Result<Vector3<f64>> {
        let mut a = self.accel_kepler(x)?;
        if self.forces.j2 {
            a += self.accel_j2_env(x, env)?;
        }
        if self.forces.earth {
            a += third_body(x.r, env.d_earth, self.gravity.mu_earth)?;
        }
        if self.forces.sun {
            a += third_body(x.r, env.d_sun, self.gravity.mu_sun)?;
        }
        if self.forces.srp {
            a += self.accel_srp_env(x, env)?;
        }
        Ok(a)
    }

    pub fn accel_total(&self, x: &StateVector, t: Epoch) -> Result<Vector3<f64>> {
        self.accel_env(x, &self.environment(t))
    }

    /// d(acceleration)/d(position) with a precomputed environment.
    pub fn accel_gradient_env(&self, x: &StateVector, env: &Environment) -> Result<Matrix3<f64>> {
        let r = x.r.norm();
        if !(r > 0.0) {
            return Err(Error::Singularity("spacecraft at the Moon's center".into()));
        }
        let mut g = point_mass_gradient(x.r, self.gravity.mu_moon);
        if self.forces.j2 {
            g += env.pa.transpose() * self.j2_gradient_pa(&(env.pa * x.r)) * env.pa;
        }
        if self.forces.earth {
            g += point_mass_gradient(x.r - env.d_earth, self.gravity.mu_earth);
        }
        if self.forces.sun {
            g += point_mass_gradient(x.r - env.d_sun, self.gravity.mu_sun);
        }
        if self.forces.srp {
            let rs = x.r - env.d_sun;
            let n = rs.norm();
            let k = self.srp_magnitude_factor(env, n) * n * n;
            // a = k rs / |rs|^3 with k independent of position.
            g -= point_mass_gradient(rs, k);
        }
        Ok(g)
    }

    fn j2_gradient_pa(&self, p: &Vector3<f64>) -> Matrix3<f64> {
        let gc = &self.gravity;
        let k = 1.5 * gc.mu_moon * gc.j2_moon * gc.r_moon * gc.r_moon;
        let r2 = p.norm_squared();
        let r = r2.sqrt();
        let r5 = r2 * r2 * r;
        let r7 = r5 * r2;
        let r9 = r7 * r2;
        let z = p.z;
        let f = 1.0 / r5 - 5.0 * z * z / r7;
        let gz = 3.0 / r5 - 5.0 * z * z / r7;
        let mut m = Matrix3::zeros();
        for q in 0..3 {
            let dz = if q == 2 { 1.0 } else { 0.0 };
            let df = -5.0 * p[q] / r7 - 10.0 * z * dz / r7 + 35.0 * z * z * p[q] / r9;
            let dg = -15.0 * p[q] / r7 - 10.0 * z * dz / r7 + 35.0 * z * z * p[q] / r9;
            let dx = if q == 0 { 1.0 } else { 0.0 };
            let dy = if q == 1 { 1.0 } else { 0.0 };
            m[(0, q)] = -k * (dx * f + p.x * df);
            m[(1, q)] = -k * (dy * f + p.y * df);
            m[(2, q)] = -k * (dz * gz + z * dg);
        }
        m
    }

    /// Jacobian of the full first-order dynamics with respect to the state.
    pub fn jacobian(&self, x: &StateVector, t: Epoch) -> Result<Matrix6<f64>> {
        let g = self.accel_gradient_env(x, &self.environment(t))?;
        let mut a = Matrix6::zeros();
        a.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
        a.fixed_view_mut::<3, 3>(3, 0).copy_from(&g);
        Ok(a)
    }
}

fn third_body(r: Vector3<f64>, d: Vector3<f64>, mu: f64) -> Result<Vector3<f64>> {
    let ri = r - d;
    let ri_n = ri.norm();
    let d_n = d.norm();
    if !(ri_n > 0.0) || !(d_n > 0.0) {
        return Err(Error::Singularity("collision with a perturbing body".into()));
    }
    Ok(-(ri / (ri_n * ri_n * ri_n) + d / (d_n * d_n * d_n)) * mu)
}

/// Gradient of `-mu r / |r|^3`.
fn point_mass_gradient(r: Vector3<f64>, mu: f64) -> Matrix3<f64> {
    let n = r.norm();
    let n3 = n * n * n;
    let u = r / n;
    (Matrix3::identity() - u * u.transpose() * 3.0) * (-mu / n3)
}

/// Osculating true anomaly in [0, 2pi) for a Keplerian central body `mu`.
pub fn osculating_true_anomaly(x: &StateVector, mu: f64) -> Result<f64> {
    let r = x.r.norm();
    if !(r > 0.0) {
        return Err(Error::Singularity("zero position".into()));
    }
    let h = x.r.cross(&x.v).norm();
    if !(h > 0.0) || h < 1e-14 * r * x.v.norm() {
        return Err(Error::UndefinedAnomaly);
    }
    let vr = x.r.dot(&x.v) / r;
    Ok((h * vr).atan2(h * h / r - mu).rem_euclid(TAU))
}

/// One-revolution finite-time Lyapunov exponent from the largest singular
/// value of `stm`; `duration` in any time unit.
pub fn ftle(stm: &Matrix6<f64>, duration: f64) -> Result<f64> {
    if !(duration.abs() > 0.0) {
        return Err(Error::invalid("FTLE horizon must be non-zero"));
    }
    if stm.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("STM contains non-finite entries"));
    }
    let cg = stm.transpose() * stm;
    let lambda_max = SymmetricEigen::new(cg).eigenvalues.max();
    Ok(lambda_max.sqrt().ln() / duration.abs())
}
