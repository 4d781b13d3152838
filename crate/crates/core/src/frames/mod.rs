//! Time, analytic ephemerides, reference frames, and canonical scaling.

mod constants;
mod ephemeris;
mod scales;

use std::ops::{Add, AddAssign, Sub};

use nalgebra::{Matrix3, Matrix6, Vector3};
use serde::{Deserialize, Serialize};

pub use constants::{Constants, DEFAULT_CONSTANTS};
pub use ephemeris::{body_position, solve_kepler, Body, EphemerisConfig, KeplerOrbit};
pub use scales::{make_canonical_scales, CanonicalScales};

use crate::dynamics::StateVector;

/// Seconds of barycentric dynamical time past the scenario reference epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Epoch(f64);

impl Epoch {
    pub const fn from_seconds(s: f64) -> Self {
        Epoch(s)
    }

    pub fn from_days(d: f64) -> Self {
        Epoch(d * 86_400.0)
    }

    pub const fn seconds(self) -> f64 {
        self.0
    }

    pub fn days(self) -> f64 {
        self.0 / 86_400.0
    }

    pub fn total_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Add<f64> for Epoch {
    type Output = Epoch;
    fn add(self, seconds: f64) -> Epoch {
        Epoch(self.0 + seconds)
    }
}

impl AddAssign<f64> for Epoch {
    fn add_assign(&mut self, seconds: f64) {
        self.0 += seconds;
    }
}

impl Sub<f64> for Epoch {
    type Output = Epoch;
    fn sub(self, seconds: f64) -> Epoch {
        Epoch(self.0 - seconds)
    }
}

impl Sub for Epoch {
    type Output = f64;
    fn sub(self, rhs: Epoch) -> f64 {
        self.0 - rhs.0
    }
}

/// Rotation from the inertial frame into a (possibly rotating) target frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameTransform {
    /// Maps inertial components to target-frame components.
    pub rotation: Matrix3<f64>,
    /// Angular velocity of the target frame relative to inertial (rad/s),
    /// resolved in the target frame.
    pub angular_velocity: Vector3<f64>,
}

impl FrameTransform {
    pub fn identity() -> Self {
        FrameTransform {
            rotation: Matrix3::identity(),
            angular_velocity: Vector3::zeros(),
        }
    }

    /// The reverse transform (target frame back to the source frame).
    pub fn inverse(&self) -> Self {
        FrameTransform {
            rotation: self.rotation.transpose(),
            angular_velocity: -(self.rotation.transpose() * self.angular_velocity),
        }
    }

    /// `self` after `first`: maps first's source frame into self's target frame.
    pub fn compose(&self, first: &FrameTransform) -> Self {
        FrameTransform {
            rotation: self.rotation * first.rotation,
            angular_velocity: self.angular_velocity + self.rotation * first.angular_velocity,
        }
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Maps an inertial state into the target frame, including the transport
    /// term of the frame's rotation. `omega_scale` converts the stored rad/s
    /// angular velocity into the state's time unit.
    pub fn state_to_frame(&self, x: &StateVector, omega_scale: f64) -> StateVector {
        let r = self.rotation * x.r;
        let w = self.angular_velocity * omega_scale;
        StateVector::new(r, self.rotation * x.v - w.cross(&r))
    }

    pub fn state_from_frame(&self, x: &StateVector, omega_scale: f64) -> StateVector {
        let w = self.angular_velocity * omega_scale;
        let rt = self.rotation.transpose();
        StateVector::new(rt * x.r, rt * (x.v + w.cross(&x.r)))
    }

    /// Jacobian of [`Self::state_to_frame`].
    pub fn state_matrix(&self, omega_scale: f64) -> Matrix6<f64> {
        let w = self.angular_velocity * omega_scale;
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(-w.cross_matrix() * self.rotation));
        m
    }

    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max()
    }
}

/// Earth-Moon rotating frame: x along the Earth->Moon direction, z along the
/// Earth-Moon orbital angular momentum.
pub fn em_rotating_frame(epoch: Epoch, cfg: &EphemerisConfig) -> FrameTransform {
    let (d, dv) = cfg.body_state(Body::Earth, epoch);
    let h = d.cross(&dv);
    let x = -d.normalize();
    let z = h.normalize();
    let y = z.cross(&x);
    FrameTransform {
        rotation: Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]),
        angular_velocity: Vector3::new(0.0, 0.0, h.norm() / d.norm_squared()),
    }
}

/// Earth-Moon distance (km) and its rate (km/s).
pub fn earth_moon_distance(epoch: Epoch, cfg: &EphemerisConfig) -> (f64, f64) {
    let (d, dv) = cfg.body_state(Body::Earth, epoch);
    let l = d.norm();
    (l, d.dot(&dv) / l)
}

/// Lunar principal-axes frame: a pole tilted from the orbit normal by the
/// configured angle, with a prime meridian rotating uniformly at the mean motion.
pub fn pa_frame(epoch: Epoch, cfg: &EphemerisConfig) -> FrameTransform {
    let orbit = &cfg.earth;
    let normal = orbit.normal();
    let ecliptic_pole = Vector3::z();
    let axis = normal.cross(&ecliptic_pole);
    let pole = if axis.norm() > 1e-12 {
        nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), cfg.moon_pole_tilt) * normal
    } else {
        nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(orbit.periapsis_direction()),
            cfg.moon_pole_tilt,
        ) * normal
    };
    let peri = orbit.periapsis_direction();
    let x0 = (peri - pole * pole.dot(&peri)).normalize();
    let y0 = pole.cross(&x0);
    let (s, c) = orbit.mean_anomaly(epoch.seconds()).sin_cos();
    let x = x0 * c + y0 * s;
    let y = pole.cross(&x);
    FrameTransform {
        rotation: Matrix3::from_rows(&[x.transpose(), y.transpose(), pole.transpose()]),
        angular_velocity: Vector3::new(0.0, 0.0, orbit.mean_motion()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EphemerisConfig {
        Constants::default().ephemeris
    }

    fn det(m: &Matrix3<f64>) -> f64 {
        m.determinant()
    }

    #[test]
    fn earth_lies_on_negative_x_axis() {
        let c = cfg();
        for k in 0..50 {
            let t = Epoch::from_seconds(k as f64 * 51_234.5);
            let f = em_rotating_frame(t, &c);
            let d = f.apply(&body_position(Body::Earth, t, &c));
            assert!(d.x < 0.0);
            assert!(d.y.abs() < 1e-9 * d.norm() && d.z.abs() < 1e-9 * d.norm());
        }
    }

    #[test]
    fn transforms_are_proper_rotations() {
        let c = cfg();
        for k in 0..50 {
            let t = Epoch::from_seconds(k as f64 * 90_001.0);
            for f in [em_rotating_frame(t, &c), pa_frame(t, &c)] {
                assert!(f.orthonormality_error() < 1e-12);
                assert!((det(&f.rotation) - 1.0).abs() < 1e-12);
                let id = f.compose(&f.inverse());
                assert!((id.rotation - Matrix3::identity()).abs().max() < 1e-12);
                assert!(id.angular_velocity.norm() < 1e-18);
            }
        }
    }

    #[test]
    fn em_angular_velocity_matches_finite_difference() {
        let c = cfg();
        let t = Epoch::from_seconds(4.0e5);
        let f = em_rotating_frame(t, &c);
        let h = 1.0;
        let rp = em_rotating_frame(t + h, &c).rotation;
        let rm = em_rotating_frame(t - h, &c).rotation;
        let rdot = (rp - rm) / (2.0 * h);
        // dR/dt = -[w]x R, with w resolved in the target frame.
        let wx = -rdot * f.rotation.transpose();
        let w_fd = Vector3::new(wx[(2, 1)], wx[(0, 2)], wx[(1, 0)]);
        assert!((w_fd - f.angular_velocity).norm() < 1e-6 * f.angular_velocity.norm());
    }

    #[test]
    fn em_rate_averages_to_sidereal_rate() {
        let c = cfg();
        let period = c.earth_moon_period();
        let n = 20_000;
        let dt = period / n as f64;
        // Trapezoid over one period of the instantaneous rate integrates to 2*pi.
        let total: f64 = (0..n)
            .map(|k| {
                let a = em_rotating_frame(Epoch::from_seconds(k as f64 * dt), &c).angular_velocity.z;
                let b = em_rotating_frame(Epoch::from_seconds((k + 1) as f64 * dt), &c).angular_velocity.z;
                0.5 * (a + b) * dt
            })
            .sum();
        assert!((total / period - std::f64::consts::TAU / period).abs() < 1e-6 * (std::f64::consts::TAU / period));
    }

    #[test]
    fn pa_frame_deterministic_and_pole_stable() {
        let c = cfg();
        let t = Epoch::from_seconds(77_777.0);
        assert_eq!(pa_frame(t, &c), pa_frame(t, &c));
        let month = c.synodic_period();
        let z0 = pa_frame(Epoch::from_seconds(0.0), &c).rotation.row(2).transpose();
        for k in 0..=100 {
            let tk = Epoch::from_seconds(month * k as f64 / 100.0);
            let z = pa_frame(tk, &c).rotation.row(2).transpose();
            let angle = z0.dot(&z).clamp(-1.0, 1.0).acos();
            assert!(angle < c.moon_pole_tilt);
        }
        let normal = c.earth.normal();
        let tilt = normal.dot(&z0).clamp(-1.0, 1.0).acos();
        assert!((tilt - c.moon_pole_tilt).abs() < 1e-12);
    }

    #[test]
    fn state_frame_round_trip() {
        let c = cfg();
        let f = em_rotating_frame(Epoch::from_seconds(1.0e5), &c);
        let x = StateVector::new(Vector3::new(1.0, -2.0, 3.0), Vector3::new(0.1, 0.2, -0.3));
        let y = f.state_from_frame(&f.state_to_frame(&x, 1000.0), 1000.0);
        assert!((y.to_vector() - x.to_vector()).norm() < 1e-14);
        let m = f.state_matrix(1000.0);
        assert!((m * x.to_vector() - f.state_to_frame(&x, 1000.0).to_vector()).norm() < 1e-14);
    }

    #[test]
    fn epoch_arithmetic() {
        let a = Epoch::from_seconds(10.0);
        let b = a + 5.0;
        assert_eq!(b - a, 5.0);
        assert!(a < b);
        assert_eq!((a + 1.5) + 2.5, a + 4.0);
        assert_eq!(Epoch::from_days(1.0).seconds(), 86_400.0);
    }
}
