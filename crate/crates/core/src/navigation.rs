//! Extended Kalman filter with Moon-centered range and range-rate
//! measurements, impulse handling, and the per-revolution tracking schedule.
//!
//! The filter works in canonical units. Measurement samples carry physical
//! units (km, km/s) and are scaled on entry.

use nalgebra::{Matrix2, Matrix2x6, Matrix6, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Dynamics, StateVector};
use crate::error::{Error, Result};
use crate::frames::{CanonicalScales, Epoch};
use crate::propagation::{propagate_with_stm, IntegratorConfig};

const HOUR: f64 = 3600.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterEstimate {
    pub x_hat: StateVector,
    pub p: Matrix6<f64>,
    pub epoch: Epoch,
}

impl FilterEstimate {
    /// Per-component one-sigma values (canonical).
    pub fn sigmas(&self) -> [f64; 6] {
        std::array::from_fn(|i| self.p[(i, i)].max(0.0).sqrt())
    }

    /// Symmetry and semidefiniteness within the filter's numerical budget.
    pub fn check_covariance(&self) -> Result<()> {
        let p = &self.p;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::FilterDivergence("non-finite covariance".into()));
        }
        let scale = p.abs().max().max(f64::MIN_POSITIVE);
        if (p - p.transpose()).abs().max() > 1e-12 * scale {
            return Err(Error::FilterDivergence("covariance lost symmetry".into()));
        }
        let min_eig = p.symmetric_eigenvalues().min();
        if min_eig < -1e-12 * p.trace().abs() {
            return Err(Error::FilterDivergence(format!("covariance eigenvalue {min_eig:e} < 0")));
        }
        Ok(())
    }
}

/// One range / range-rate sample with its diagonal noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSample {
    pub epoch: Epoch,
    /// km
    pub range: f64,
    /// km/s
    pub range_rate: f64,
    /// One-sigma noise, km and km/s.
    pub sigma_range: f64,
    pub sigma_range_rate: f64,
}

impl MeasurementSample {
    pub fn validate(&self) -> Result<()> {
        if !(self.range > 0.0) || !self.range_rate.is_finite() {
            return Err(Error::invalid("measurement range must be positive and finite"));
        }
        if !(self.sigma_range > 0.0 && self.sigma_range_rate > 0.0) {
            return Err(Error::invalid("measurement noise must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessNoiseConfig {
    /// Canonical random-walk intensity.
    pub sigma_p: f64,
}

impl Default for ProcessNoiseConfig {
    fn default() -> Self {
        ProcessNoiseConfig { sigma_p: 5e-5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingSchedule {
    pub window_duration_h: f64,
    pub post_maneuver_offset_h: f64,
    /// Window starts, hours before the next maneuver.
    pub pre_maneuver_offsets_h: Vec<f64>,
    pub n_meas_per_window: usize,
}

impl Default for TrackingSchedule {
    fn default() -> Self {
        TrackingSchedule {
            window_duration_h: 1.0,
            post_maneuver_offset_h: 12.0,
            pre_maneuver_offsets_h: vec![72.0, 48.0, 7.0],
            n_meas_per_window: 10,
        }
    }
}

impl TrackingSchedule {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.window_duration_h) || !positive(self.post_maneuver_offset_h) {
            return Err(Error::invalid("tracking durations and offsets must be positive"));
        }
        if !self.pre_maneuver_offsets_h.iter().all(|&v| positive(v)) {
            return Err(Error::invalid("pre-maneuver offsets must be positive"));
        }
        if self.n_meas_per_window == 0 {
            return Err(Error::invalid("a tracking window needs at least one measurement"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingWindow {
    pub start: Epoch,
    pub end: Epoch,
    pub n_meas: usize,
    /// Shortened to fit between the two maneuvers.
    pub clipped: bool,
    /// Formed by merging overlapping windows.
    pub merged: bool,
}

impl TrackingWindow {
    /// Equally spaced sample epochs, the last one at the window end.
    pub fn sample_epochs(&self) -> Vec<Epoch> {
        let dt = (self.end - self.start) / self.n_meas as f64;
        (1..=self.n_meas).map(|i| self.start + i as f64 * dt).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingPlan {
    pub windows: Vec<TrackingWindow>,
    /// Windows dropped entirely because they fell outside the interval.
    pub dropped: usize,
    pub clipped: usize,
    pub merged: usize,
}

impl TrackingPlan {
    pub fn sample_epochs(&self) -> Vec<Epoch> {
        self.windows.iter().flat_map(|w| w.sample_epochs()).collect()
    }
}

/// Tracking windows between two maneuver epochs: one after `t_prev` and one
/// per pre-maneuver offset before `t_next`, clipped to the open interval.
pub fn tracking_windows(t_prev: Epoch, t_next: Epoch, sched: &TrackingSchedule) -> Result<TrackingPlan> {
    sched.validate()?;
    if !(t_next > t_prev) {
        return Err(Error::invalid("tracking interval must have t_next > t_prev"));
    }
    let dur = sched.window_duration_h * HOUR;
    let mut raw: Vec<(Epoch, Epoch)> = vec![(t_prev + sched.post_maneuver_offset_h * HOUR, Epoch::from_seconds(0.0))];
    raw[0].1 = raw[0].0 + dur;
    raw.extend(sched.pre_maneuver_offsets_h.iter().map(|&h| {
        let s = t_next - h * HOUR;
        (s, s + dur)
    }));

    let mut plan = TrackingPlan {
        windows: Vec::new(),
        dropped: 0,
        clipped: 0,
        merged: 0,
    };
    let mut kept: Vec<TrackingWindow> = Vec::new();
    for (s, e) in raw {
        let (cs, ce) = (if s > t_prev { s } else { t_prev }, if e < t_next { e } else { t_next });
        if !(ce > cs) {
            plan.dropped += 1;
            continue;
        }
        let clipped = cs != s || ce != e;
        plan.clipped += clipped as usize;
        kept.push(TrackingWindow {
            start: cs,
            end: ce,
            n_meas: sched.n_meas_per_window,
            clipped,
            merged: false,
        });
    }
    kept.sort_by(|a, b| a.start.total_cmp(&b.start));
    for w in kept {
        match plan.windows.last_mut() {
            Some(last) if w.start <= last.end => {
                if w.end > last.end {
                    last.end = w.end;
                }
                last.n_meas += w.n_meas;
                last.clipped |= w.clipped;
                last.merged = true;
                plan.merged += 1;
            }
            _ => plan.windows.push(w),
        }
    }
    Ok(plan)
}

/// Random-walk process noise over `dt` canonical time units.
pub fn process_noise(dt: f64, noise: &ProcessNoiseConfig) -> Result<Matrix6<f64>> {
    if !(dt >= 0.0) {
        return Err(Error::invalid("process-noise interval must be non-negative"));
    }
    let s2 = noise.sigma_p * noise.sigma_p;
    let mut q = Matrix6::zeros();
    for i in 0..3 {
        q[(i, i)] = s2 * dt.powi(3) / 3.0;
        q[(i, i + 3)] = s2 * dt * dt / 2.0;
        q[(i + 3, i)] = s2 * dt * dt / 2.0;
        q[(i + 3, i + 3)] = s2 * dt;
    }
    Ok(q)
}

/// Something that maps a state and its STM between two epochs.
pub trait Transition {
    fn transition(&self, x: &StateVector, t0: Epoch, t1: Epoch) -> Result<(StateVector, Matrix6<f64>)>;
    /// Seconds per canonical time unit.
    fn time_unit(&self) -> f64;
}

/// The full dynamics under a given integrator configuration.
#[derive(Clone, Copy, Debug)]
pub struct DynamicsTransition<'a> {
    pub dynamics: &'a Dynamics,
    pub cfg: &'a IntegratorConfig,
}

impl Transition for DynamicsTransition<'_> {
    fn transition(&self, x: &StateVector, t0: Epoch, t1: Epoch) -> Result<(StateVector, Matrix6<f64>)> {
        let (xf, phi) = propagate_with_stm(self.dynamics, x, t0, t1, self.cfg)?;
        Ok((xf, phi.0))
    }

    fn time_unit(&self) -> f64 {
        self.dynamics.scales.tu
    }
}

pub fn ekf_predict(
    model: &impl Transition,
    est: &FilterEstimate,
    t_to: Epoch,
    noise: &ProcessNoiseConfig,
) -> Result<FilterEstimate> {
    if t_to < est.epoch {
        return Err(Error::invalid("ekf_predict cannot run backwards"));
    }
    if t_to == est.epoch {
        return Ok(*est);
    }
    let (x, phi) = model.transition(&est.x_hat, est.epoch, t_to)?;
    let q = process_noise((t_to - est.epoch) / model.time_unit(), noise)?;
    let p = phi * est.p * phi.transpose() + q;
    Ok(FilterEstimate {
        x_hat: x,
        p: 0.5 * (p + p.transpose()),
        epoch: t_to,
    })
}

/// Range and range-rate from the Moon's center, with partials.
pub fn measurement_model(x: &StateVector) -> Result<(Vector2<f64>, Matrix2x6<f64>)> {
    let r = x.r.norm();
    if !(r > 0.0) {
        return Err(Error::Singularity("range measurement at the origin".into()));
    }
    let u = x.r / r;
    let rdot = x.r.dot(&x.v) / r;
    let drdot_dr = x.v / r - x.r * (rdot / (r * r));
    let mut h = Matrix2x6::zeros();
    h.fixed_view_mut::<1, 3>(0, 0).copy_from(&u.transpose());
    h.fixed_view_mut::<1, 3>(1, 0).copy_from(&drdot_dr.transpose());
    h.fixed_view_mut::<1, 3>(1, 3).copy_from(&u.transpose());
    Ok((Vector2::new(r, rdot), h))
}

/// Joseph-form update for a generic measurement with prediction `h_pred`
/// and partials `h` about the prior.
pub fn kalman_update<const M: usize>(
    est: &FilterEstimate,
    y: &SVector<f64, M>,
    h_pred: &SVector<f64, M>,
    h: &SMatrix<f64, M, 6>,
    r: &SMatrix<f64, M, M>,
) -> Result<FilterEstimate> {
    let s = h * est.p * h.transpose() + r;
    let s_inv = s
        .cholesky()
        .ok_or_else(|| Error::FilterDivergence("innovation covariance is not positive definite".into()))?
        .inverse();
    let gain = est.p * h.transpose() * s_inv;
    let x = est.x_hat.to_vector() + gain * (y - h_pred);
    let i_lh = Matrix6::identity() - gain * h;
    let p = i_lh * est.p * i_lh.transpose() + gain * r * gain.transpose();
    Ok(FilterEstimate {
        x_hat: StateVector::from_vector(&x),
        p: 0.5 * (p + p.transpose()),
        epoch: est.epoch,
    })
}

pub fn ekf_update(est: &FilterEstimate, y: &MeasurementSample, scales: &CanonicalScales) -> Result<FilterEstimate> {
    y.validate()?;
    if y.epoch != est.epoch {
        return Err(Error::invalid("measurement epoch differs from the estimate epoch"));
    }
    let (h_pred, h) = measurement_model(&est.x_hat)?;
    let obs = Vector2::new(y.range / scales.lu, y.range_rate / scales.vu);
    let r = Matrix2::from_diagonal(&Vector2::new(
        (y.sigma_range / scales.lu).powi(2),
        (y.sigma_range_rate / scales.vu).powi(2),
    ));
    kalman_update(est, &obs, &h_pred, &h, &r)
}

/// Iterated update: relinearizes the measurement about the running
/// posterior mean until the correction stops changing, then forms the
/// Joseph-form covariance with the final partials. One iteration is
/// exactly [`ekf_update`].
pub fn iterated_ekf_update(
    est: &FilterEstimate,
    y: &MeasurementSample,
    scales: &CanonicalScales,
    max_iterations: usize,
) -> Result<FilterEstimate> {
    if max_iterations <= 1 {
        return ekf_update(est, y, scales);
    }
    y.validate()?;
    if y.epoch != est.epoch {
        return Err(Error::invalid("measurement epoch differs from the estimate epoch"));
    }
    let obs = Vector2::new(y.range / scales.lu, y.range_rate / scales.vu);
    let r = Matrix2::from_diagonal(&Vector2::new(
        (y.sigma_range / scales.lu).powi(2),
        (y.sigma_range_rate / scales.vu).powi(2),
    ));
    let prior = est.x_hat.to_vector();
    let mut xi = est.x_hat;
    let mut out = *est;
    for _ in 0..max_iterations {
        let (h_pred, h) = measurement_model(&xi)?;
        // Residual about the prior, expanded around the current iterate.
        let pseudo = h_pred + h * (prior - xi.to_vector());
        out = kalman_update(est, &obs, &pseudo, &h, &r)?;
        let step = (out.x_hat.to_vector() - xi.to_vector()).norm();
        xi = out.x_hat;
        if step <= 1e-13 * (1.0 + prior.norm()) {
            break;
        }
    }
    Ok(out)
}

/// Applies an expected impulse `dv_hat` (canonical) and inflates the
/// velocity covariance by the thruster's execution uncertainty.
pub fn apply_maneuver_to_estimate(
    est: &FilterEstimate,
    dv_hat: &Vector3<f64>,
    exec_sigma_abs: f64,
    exec_sigma_rel: f64,
) -> FilterEstimate {
    let mut out = *est;
    out.x_hat.v += dv_hat;
    let var = (exec_sigma_abs + exec_sigma_rel * dv_hat.norm()).powi(2);
    for i in 3..6 {
        out.p[(i, i)] += var;
    }
    out
}
