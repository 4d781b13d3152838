//! Numerical propagation of the dynamics and the state-transition matrix,
//! event location, and impulsive maneuvers.

mod rk;
mod tableau;

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{osculating_true_anomaly, Dynamics, StateVector};
use crate::error::{Error, Result};
use crate::frames::Epoch;

pub(crate) use rk::{integrate, Failure, Step};
use rk::rk_step;

/// Tolerances and step bounds; step sizes are canonical time units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub min_step: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_max_steps() -> usize {
    2_000_000
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-12,
            abs_tol: 1e-12,
            max_step: 0.5,
            min_step: 1e-14,
            max_steps: default_max_steps(),
        }
    }
}

impl IntegratorConfig {
    pub fn with_tolerance(tol: f64) -> Self {
        IntegratorConfig {
            rel_tol: tol,
            abs_tol: tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::invalid("integrator tolerances must be positive"));
        }
        if !(self.min_step > 0.0 && self.min_step < self.max_step && self.max_step.is_finite()) {
            return Err(Error::invalid("integrator needs 0 < min_step < max_step"));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps must be positive"));
        }
        Ok(())
    }
}

/// State-transition matrix with position/velocity block accessors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stm(pub Matrix6<f64>);

impl Stm {
    pub fn identity() -> Self {
        Stm(Matrix6::identity())
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.0
    }

    pub fn rr(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into()
    }

    pub fn rv(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 3).into()
    }

    pub fn vr(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(3, 0).into()
    }

    pub fn vv(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(3, 3).into()
    }

    /// Response of the final state to a velocity impulse at the initial epoch.
    pub fn velocity_columns(&self) -> nalgebra::Matrix6x3<f64> {
        self.0.fixed_view::<6, 3>(0, 3).into()
    }

    /// `self` after `earlier`: Φ(t2,t0) = Φ(t2,t1) Φ(t1,t0).
    pub fn compose(&self, earlier: &Stm) -> Stm {
        Stm(self.0 * earlier.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpulsiveManeuver {
    pub epoch: Epoch,
    /// Inertial velocity increment (canonical).
    pub dv: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TrueAnomaly,
    Apolune,
    Perilune,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Any,
}

/// An osculating true-anomaly crossing to search for.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub kind: EventKind,
    /// Target anomaly (rad); only read for [`EventKind::TrueAnomaly`].
    pub target_angle: f64,
    pub direction: Direction,
}

impl EventSpec {
    pub fn true_anomaly(angle: f64) -> Self {
        EventSpec {
            kind: EventKind::TrueAnomaly,
            target_angle: angle.rem_euclid(TAU),
            direction: Direction::Increasing,
        }
    }

    pub fn apolune() -> Self {
        EventSpec {
            kind: EventKind::Apolune,
            target_angle: PI,
            direction: Direction::Increasing,
        }
    }

    pub fn perilune() -> Self {
        EventSpec {
            kind: EventKind::Perilune,
            target_angle: 0.0,
            direction: Direction::Increasing,
        }
    }

    fn angle(&self) -> f64 {
        match self.kind {
            EventKind::TrueAnomaly => self.target_angle,
            EventKind::Apolune => PI,
            EventKind::Perilune => 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..TAU).contains(&self.target_angle) {
            return Err(Error::invalid("event target angle must lie in [0, 2pi)"));
        }
        Ok(())
    }
}

/// Events closer than this to the search start (canonical time) are ignored.
const EVENT_START_GUARD: f64 = 1e-6;

fn wrap_pi(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

fn state6<const N: usize>(y: &[f64; N]) -> StateVector {
    StateVector::from_slice(&y[..6])
}

fn to_error<const N: usize>(d: &Dynamics, f: Failure<N>) -> Error {
    Error::PropagationFailure {
        epoch: d.epoch(f.t),
        last_state: Box::new(state6(&f.y)),
        reason: f.reason,
    }
}

fn check_state(x: &StateVector) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::invalid("state has non-finite components"));
    }
    Ok(())
}

fn state_rhs(d: &Dynamics) -> impl FnMut(f64, &[f64; 6]) -> std::result::Result<[f64; 6], String> + '_ {
    move |tau, y| {
        let x = StateVector::from_slice(y);
        let a = d.accel_total(&x, d.epoch(tau)).map_err(|e| e.to_string())?;
        Ok([y[3], y[4], y[5], a.x, a.y, a.z])
    }
}

fn stm_rhs(d: &Dynamics) -> impl FnMut(f64, &[f64; 42]) -> std::result::Result<[f64; 42], String> + '_ {
    move |tau, y| {
        let x = StateVector::from_slice(y);
        let env = d.environment(d.epoch(tau));
        let a = d.accel_env(&x, &env).map_err(|e| e.to_string())?;
        let g = d.accel_gradient_env(&x, &env).map_err(|e| e.to_string())?;
        let mut out = [0.0; 42];
        out[..3].copy_from_slice(&y[3..6]);
        out[3] = a.x;
        out[4] = a.y;
        out[5] = a.z;
        // Phi is stored row-major after the state.
        let phi = &y[6..];
        out[6..24].copy_from_slice(&phi[18..36]);
        for i in 0..3 {
            for j in 0..6 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += g[(i, k)] * phi[k * 6 + j];
                }
                out[6 + 18 + i * 6 + j] = s;
            }
        }
        Ok(out)
    }
}

/// Propagates `x0` (canonical) from `t0` to `t1`, forward or backward.
pub fn propagate(d: &Dynamics, x0: &StateVector, t0: Epoch, t1: Epoch, cfg: &IntegratorConfig) -> Result<StateVector> {
    cfg.validate()?;
    check_state(x0)?;
    if t1 == t0 {
        return Ok(*x0);
    }
    let mut rhs = state_rhs(d);
    let (_, y) = integrate(&mut rhs, d.tau(t0), x0.to_array(), d.tau(t1), cfg, |_, _| Ok(true))
        .map_err(|f| to_error(d, f))?;
    Ok(StateVector::from_slice(&y))
}

/// Propagates the state together with Φ(t1, t0).
pub fn propagate_with_stm(
    d: &Dynamics,
    x0: &StateVector,
    t0: Epoch,
    t1: Epoch,
    cfg: &IntegratorConfig,
) -> Result<(StateVector, Stm)> {
    cfg.validate()?;
    check_state(x0)?;
    if t1 == t0 {
        return Ok((*x0, Stm::identity()));
    }
    let mut y0 = [0.0; 42];
    y0[..6].copy_from_slice(&x0.to_array());
    for i in 0..6 {
        y0[6 + i * 6 + i] = 1.0;
    }
    let mut rhs = stm_rhs(d);
    let (_, y) = integrate(&mut rhs, d.tau(t0), y0, d.tau(t1), cfg, |_, _| Ok(true))
        .map_err(|f| to_error(d, f))?;
    let phi = Matrix6::from_row_slice(&y[6..]);
    Ok((StateVector::from_slice(&y[..6]), Stm(phi)))
}

/// Adds an inertial velocity increment.
pub fn apply_impulse(x: &StateVector, dv: &Vector3<f64>) -> StateVector {
    StateVector::new(x.r, x.v + dv)
}

/// Propagates through `times` (sorted, all on one side of `t0`), restarting
/// the integrator at each output epoch.
pub fn propagate_to_times(
    d: &Dynamics,
    x0: &StateVector,
    t0: Epoch,
    times: &[Epoch],
    cfg: &IntegratorConfig,
) -> Result<Vec<StateVector>> {
    let mut out = Vec::with_capacity(times.len());
    let mut t = t0;
    let mut x = *x0;
    for &ti in times {
        if (ti - t) * (times.last().map_or(0.0, |&l| l - t0)) < 0.0 {
            return Err(Error::invalid("output epochs must be monotone away from t0"));
        }
        x = propagate(d, &x, t, ti, cfg)?;
        t = ti;
        out.push(x);
    }
    Ok(out)
}

/// Propagation with a sequence of impulses applied at their epochs.
pub fn propagate_controlled(
    d: &Dynamics,
    x0: &StateVector,
    t0: Epoch,
    tn: Epoch,
    maneuvers: &[ImpulsiveManeuver],
    cfg: &IntegratorConfig,
) -> Result<StateVector> {
    validate_maneuvers(maneuvers, t0, tn)?;
    let mut x = *x0;
    let mut t = t0;
    for m in maneuvers {
        x = propagate(d, &x, t, m.epoch, cfg)?;
        x = apply_impulse(&x, &m.dv);
        t = m.epoch;
    }
    propagate(d, &x, t, tn, cfg)
}

pub(crate) fn validate_maneuvers(maneuvers: &[ImpulsiveManeuver], t0: Epoch, tn: Epoch) -> Result<()> {
    if tn < t0 {
        return Err(Error::invalid("controlled propagation runs forward in time"));
    }
    for (i, m) in maneuvers.iter().enumerate() {
        if !(m.dv.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("maneuver dv must be finite"));
        }
        if m.epoch < t0 || m.epoch > tn {
            return Err(Error::invalid("maneuver epoch outside the propagation interval"));
        }
        if i > 0 && m.epoch <= maneuvers[i - 1].epoch {
            return Err(Error::invalid("maneuver epochs must be strictly increasing"));
        }
    }
    Ok(())
}

/// Signed anomaly offset from the target, wrapped to (-pi, pi].
fn event_value(d: &Dynamics, y: &[f64], target: f64) -> std::result::Result<f64, String> {
    let theta = osculating_true_anomaly(&StateVector::from_slice(&y[..6]), d.gravity.mu_moon)
        .map_err(|e| e.to_string())?;
    Ok(wrap_pi(theta - target))
}

fn crosses(ga: f64, gb: f64, direction: Direction) -> bool {
    // A jump of about 2pi is the wrap point opposite the target, not a root.
    if (gb - ga).abs() >= PI {
        return false;
    }
    match direction {
        Direction::Increasing => ga < 0.0 && gb >= 0.0,
        Direction::Any => (ga < 0.0 && gb >= 0.0) || (ga > 0.0 && gb <= 0.0),
    }
}

/// Earliest crossing of `spec` in `(t0, t0 + horizon]`, or `None` if there is
/// none. `horizon` is in seconds.
pub fn find_event(
    d: &Dynamics,
    x0: &StateVector,
    t0: Epoch,
    spec: &EventSpec,
    horizon: f64,
    cfg: &IntegratorConfig,
) -> Result<Option<(Epoch, StateVector)>> {
    cfg.validate()?;
    spec.validate()?;
    check_state(x0)?;
    if !(horizon > 0.0) {
        return Err(Error::invalid("event search horizon must be positive"));
    }
    let target = spec.angle();
    let tau0 = d.tau(t0);
    let mut found: Option<(f64, [f64; 6])> = None;
    let mut rhs = state_rhs(d);
    integrate(&mut rhs, tau0, x0.to_array(), d.tau(t0 + horizon), cfg, |step, rhs| {
        let ga = event_value(d, &step.y0, target)?;
        let gb = event_value(d, &step.y1, target)?;
        if !crosses(ga, gb, spec.direction) {
            return Ok(true);
        }
        let (tau, y) = refine_root(rhs, step, ga, gb, cfg, |y| event_value(d, y, target))?;
        if tau - tau0 <= EVENT_START_GUARD {
            return Ok(true);
        }
        found = Some((tau, y));
        Ok(false)
    })
    .map_err(|f| to_error(d, f))?;
    Ok(found.map(|(tau, y)| (d.epoch(tau), StateVector::from_slice(&y))))
}

/// Illinois root refinement inside an accepted step; intermediate states are
/// produced by a single step from the step start.
pub(crate) fn refine_root<const N: usize, R, G>(
    rhs: &mut R,
    step: &Step<N>,
    ga: f64,
    gb: f64,
    cfg: &IntegratorConfig,
    mut g: G,
) -> std::result::Result<(f64, [f64; N]), String>
where
    R: rk::Rhs<N>,
    G: FnMut(&[f64; N]) -> std::result::Result<f64, String>,
{
    let h = step.t1 - step.t0;
    let state_at = |s: f64, rhs: &mut R| -> std::result::Result<[f64; N], String> {
        if s == 0.0 {
            Ok(step.y0)
        } else if s == h {
            Ok(step.y1)
        } else {
            rk_step(rhs, step.t0, &step.y0, &step.f0, s, cfg).map(|r| r.0)
        }
    };
    let (mut a, mut fa, mut b, mut fb) = (0.0, ga, h, gb);
    let mut best = (b, step.y1);
    if fb == 0.0 {
        return Ok((step.t1, step.y1));
    }
    let tol = 1e-14 * step.t1.abs().max(1.0);
    let mut side = 0i8;
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        let mut s = (a * fb - b * fa) / (fb - fa);
        if !(s.abs() > a.abs().min(b.abs()) && s.abs() < a.abs().max(b.abs())) {
            s = 0.5 * (a + b);
        }
        let y = state_at(s, rhs)?;
        let fs = g(&y)?;
        best = (s, y);
        if fs == 0.0 {
            break;
        }
        if (fs < 0.0) == (fa < 0.0) {
            a = s;
            fa = fs;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = s;
            fb = fs;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    Ok((step.t0 + best.0, best.1))
}

/// Propagates while recording every accepted step, for callers that sample
/// the trajectory densely.
pub(crate) fn propagate_steps(
    d: &Dynamics,
    x0: &StateVector,
    t0: Epoch,
    t1: Epoch,
    cfg: &IntegratorConfig,
) -> Result<Vec<Step<6>>> {
    cfg.validate()?;
    check_state(x0)?;
    let mut steps = Vec::new();
    let mut rhs = state_rhs(d);
    integrate(&mut rhs, d.tau(t0), x0.to_array(), d.tau(t1), cfg, |s, _| {
        steps.push(*s);
        Ok(true)
    })
    .map_err(|f| to_error(d, f))?;
    Ok(steps)
}
