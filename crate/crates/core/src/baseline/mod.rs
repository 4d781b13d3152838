//! Reference NRHO generation, storage, and interpolation.

mod cr3bp;
mod file;
mod shooting;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Dynamics, StateVector};
use crate::error::{Error, Result};
use crate::frames::{earth_moon_distance, em_rotating_frame, Epoch};
use crate::propagation::{find_event, propagate_steps, propagate_to_times, EventSpec, IntegratorConfig};

pub use file::write_atomic;
pub use cr3bp::{cr3bp_flow, generate_cr3bp_by_period, generate_cr3bp_nrho, perilune_radius, Cr3bpOrbit};
use shooting::{multiple_shooting, ShootingOptions};

pub const BASELINE_FORMAT_VERSION: u32 = 1;

/// Shooting segments per half revolution.
const SHOOTING_SUBDIVISIONS: usize = 8;

/// Parameters of a generated baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub revolutions: usize,
    /// Revolutions per `resonance_months` synodic months (9:2 by default).
    pub resonance_revolutions: u32,
    pub resonance_months: u32,
    pub knots_per_revolution: usize,
    /// First node (a perilune) epoch, seconds.
    pub start_epoch: Epoch,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            revolutions: 64,
            resonance_revolutions: 9,
            resonance_months: 2,
            knots_per_revolution: 200,
            start_epoch: Epoch::from_seconds(0.0),
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.revolutions < 10 {
            return Err(Error::invalid("a baseline needs at least 10 revolutions"));
        }
        if self.resonance_revolutions == 0 || self.resonance_months == 0 {
            return Err(Error::invalid("resonance ratio must be positive"));
        }
        if self.knots_per_revolution < 20 || self.knots_per_revolution % 2 != 0 {
            return Err(Error::invalid("knots_per_revolution must be even and at least 20"));
        }
        Ok(())
    }
}

/// Generation parameters and quality figures stored with a baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineMetadata {
    pub format_version: u32,
    pub seed: Cr3bpOrbit,
    pub revolutions: usize,
    pub knots_per_revolution: usize,
    /// Length, velocity, and time units of the stored states.
    pub lu: f64,
    pub vu: f64,
    pub tu: f64,
    pub area_to_mass: f64,
    pub cr: f64,
    pub max_position_defect_km: f64,
    pub max_velocity_defect_kms: f64,
}

/// One interpolation knot (canonical state and acceleration).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub epoch: Epoch,
    pub state: StateVector,
    pub accel: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApsisKind {
    Apolune,
    Perilune,
}

/// Densely sampled reference NRHO.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineOrbit {
    pub knots: Vec<Knot>,
    pub apolune_epochs: Vec<Epoch>,
    pub perilune_epochs: Vec<Epoch>,
    pub metadata: BaselineMetadata,
}

/// Earth-Moon mass ratio of the CR3BP approximation.
pub fn mass_ratio(d: &Dynamics) -> f64 {
    d.constants.mu_moon / (d.constants.mu_moon + d.constants.mu_earth)
}

/// Resonant NRHO period (seconds) for `revs` revolutions per `months` synodic months.
pub fn resonant_period(d: &Dynamics, revs: u32, months: u32) -> f64 {
    d.ephemeris().synodic_period() * months as f64 / revs as f64
}

/// CR3BP seed for the configured resonance.
pub fn generate_seed(d: &Dynamics, cfg: &BaselineConfig) -> Result<Cr3bpOrbit> {
    cfg.validate()?;
    let n = d.ephemeris().earth.mean_motion();
    let period = resonant_period(d, cfg.resonance_revolutions, cfg.resonance_months) * n;
    generate_cr3bp_by_period(mass_ratio(d), period)
}

/// Maps a CR3BP state at `epoch` into the Moon-centered inertial frame
/// (canonical), scaling lengths by the instantaneous Earth-Moon distance.
pub fn cr3bp_to_inertial(d: &Dynamics, mu: f64, x: &[f64; 6], epoch: Epoch) -> StateVector {
    let eph = d.ephemeris();
    let (l, l_dot) = earth_moon_distance(epoch, eph);
    let n = eph.earth.mean_motion();
    let rho = Vector3::new(x[0] - (1.0 - mu), x[1], x[2]);
    let rho_dot = Vector3::new(x[3], x[4], x[5]);
    let frame = em_rotating_frame(epoch, eph);
    let rotating = StateVector::new(rho * l, rho * l_dot + rho_dot * (l * n));
    d.scales.to_canonical(&frame.state_from_frame(&rotating, 1.0))
}

/// Multiple-shooting refinement of the stacked CR3BP seed under the full
/// dynamics, followed by knot sampling and apsis detection.
pub fn refine_baseline(
    d: &Dynamics,
    seed: &Cr3bpOrbit,
    cfg: &BaselineConfig,
    icfg: &IntegratorConfig,
) -> Result<BaselineOrbit> {
    cfg.validate()?;
    icfg.validate()?;
    let mu = seed.mass_ratio;
    let n = d.ephemeris().earth.mean_motion();
    let half_period = 0.5 * seed.period / n;
    let segments = 2 * cfg.revolutions;

    // Shooting nodes subdivide each half revolution evenly in the Sundman
    // variable; every perilune and apolune of the seed is a node, starting
    // with a perilune.
    let sub = SHOOTING_SUBDIVISIONS;
    let offsets = cr3bp::sundman_offsets(seed, sub)?;
    let half = 0.5 * seed.period;
    let phases: Vec<f64> = (0..=segments * sub)
        .map(|k| {
            let (h, j) = (k / sub, k % sub);
            let within = if h % 2 == 0 { offsets[j] } else { half - offsets[sub - j] };
            h as f64 * half + within
        })
        .collect();
    let epochs: Vec<Epoch> = phases.iter().map(|p| cfg.start_epoch + p / n).collect();
    let circular = blended_model(d, 0.0, 0.0)?;
    let nodes: Vec<StateVector> = phases
        .iter()
        .zip(&epochs)
        .map(|(&p, &t)| {
            let phase = (half + p).rem_euclid(seed.period);
            let x = if phase == 0.0 {
                Ok(seed.initial_state)
            } else {
                cr3bp_flow(mu, &seed.initial_state, phase).map(|f| f.0)
            };
            x.map(|x| cr3bp_to_inertial(&circular, mu, &x, t))
        })
        .collect::<Result<_>>()?;

    let shot = homotopy_shooting(d, epochs, nodes, icfg)?;
    let epochs: Vec<Epoch> = shot.epochs.iter().copied().step_by(sub).collect();
    let apsis_nodes: Vec<StateVector> = shot.nodes.iter().copied().step_by(sub).collect();
    log::info!(
        "baseline converged in {} iterations (max defects {:.2e} km, {:.2e} km/s)",
        shot.iterations,
        shot.max_position_defect * d.scales.lu,
        shot.max_velocity_defect * d.scales.vu
    );

    let per_segment = cfg.knots_per_revolution / 2;
    let mut knots = Vec::with_capacity(segments * per_segment + 1);
    let mut apolunes = Vec::new();
    let mut perilunes = Vec::new();
    for j in 0..segments {
        let (t0, t1) = (epochs[j], epochs[j + 1]);
        let x0 = apsis_nodes[j];
        let times = sundman_times(d, &x0, t0, t1, per_segment, icfg)?;
        let states = propagate_to_times(d, &x0, t0, &times, icfg)?;
        knots.push(make_knot(d, t0, x0)?);
        for (&t, x) in times.iter().zip(&states).take(per_segment - 1) {
            knots.push(make_knot(d, t, *x)?);
        }
        for (spec, list) in [(EventSpec::apolune(), &mut apolunes), (EventSpec::perilune(), &mut perilunes)] {
            if let Some((te, _)) = find_event(d, &x0, t0, &spec, t1 - t0, icfg)? {
                // Events within the guard of a node belong to the previous segment.
                if list.last().map_or(true, |&l: &Epoch| te - l > 0.25 * half_period) {
                    list.push(te);
                }
            }
        }
    }
    knots.push(make_knot(d, epochs[segments], apsis_nodes[segments])?);

    Ok(BaselineOrbit {
        knots,
        apolune_epochs: apolunes,
        perilune_epochs: perilunes,
        metadata: BaselineMetadata {
            format_version: BASELINE_FORMAT_VERSION,
            seed: *seed,
            revolutions: cfg.revolutions,
            knots_per_revolution: cfg.knots_per_revolution,
            lu: d.scales.lu,
            vu: d.scales.vu,
            tu: d.scales.tu,
            area_to_mass: d.spacecraft.area_to_mass,
            cr: d.spacecraft.cr,
            max_position_defect_km: shot.max_position_defect * d.scales.lu,
            max_velocity_defect_kms: shot.max_velocity_defect * d.scales.vu,
        },
    })
}

/// The full model with the Earth-orbit eccentricity scaled by `ecc` and
/// the Sun, J2, and SRP terms scaled by `pert`.
fn blended_model(d: &Dynamics, ecc: f64, pert: f64) -> Result<Dynamics> {
    let mut c = d.constants;
    c.ephemeris.earth.ecc *= ecc;
    let mut m = Dynamics::new(c, d.spacecraft, d.forces)?;
    m.gravity.mu_sun *= pert;
    m.gravity.p_sun *= pert;
    m.gravity.j2_moon *= pert;
    Ok(m)
}

/// Continues the shooting solution from the circular, Earth-only model
/// (where the CR3BP seed is exact) to the full model.
fn homotopy_shooting(
    d: &Dynamics,
    mut epochs: Vec<Epoch>,
    mut nodes: Vec<StateVector>,
    icfg: &IntegratorConfig,
) -> Result<shooting::ShootingResult> {
    let loose = ShootingOptions {
        max_iterations: 12,
        position_tol: 1e-3 / d.scales.lu,
        velocity_tol: 1e-6 / d.scales.vu,
        position_limit: 1e-3 / d.scales.lu,
        velocity_limit: 1e-6 / d.scales.vu,
    };
    let tight = ShootingOptions {
        max_iterations: 20,
        position_tol: 1e-8 / d.scales.lu,
        velocity_tol: 1e-12 / d.scales.vu,
        position_limit: 1e-3 / d.scales.lu,
        velocity_limit: 1e-6 / d.scales.vu,
    };
    // Path parameter s in [0, 2]: eccentricity first, then perturbations.
    let blend = |s: f64| (s.min(1.0), (s - 1.0).max(0.0));
    let mut s = 0.0f64;
    let mut ds = 0.125f64;
    let r = multiple_shooting(&blended_model(d, 0.0, 0.0)?, epochs, nodes, icfg, &loose)?;
    (epochs, nodes) = (r.epochs, r.nodes);
    while s < 2.0 {
        let target = (s + ds).min(2.0);
        let (e, p) = blend(target);
        match multiple_shooting(&blended_model(d, e, p)?, epochs.clone(), nodes.clone(), icfg, &loose) {
            Ok(r) => {
                log::debug!("homotopy reached s = {target}");
                (epochs, nodes) = (r.epochs, r.nodes);
                s = target;
                ds = (ds * 1.5).min(0.5);
            }
            Err(err @ (Error::Refinement { .. } | Error::PropagationFailure { .. })) => {
                ds *= 0.5;
                if ds < 1e-3 {
                    return Err(err);
                }
            }
            Err(e) => return Err(e),
        }
    }
    multiple_shooting(d, epochs, nodes, icfg, &tight)
}

/// Seed generation plus refinement.
pub fn generate_baseline(d: &Dynamics, cfg: &BaselineConfig, icfg: &IntegratorConfig) -> Result<BaselineOrbit> {
    let seed = generate_seed(d, cfg)?;
    refine_baseline(d, &seed, cfg, icfg)
}

fn make_knot(d: &Dynamics, epoch: Epoch, state: StateVector) -> Result<Knot> {
    Ok(Knot {
        epoch,
        state,
        accel: d.accel_total(&state, epoch)?,
    })
}

/// Interior knot epochs of one segment, spaced uniformly in the Sundman-like
/// variable s with ds = dt / r, so knots cluster near perilune.
fn sundman_times(
    d: &Dynamics,
    x0: &StateVector,
    t0: Epoch,
    t1: Epoch,
    intervals: usize,
    icfg: &IntegratorConfig,
) -> Result<Vec<Epoch>> {
    let steps = propagate_steps(d, x0, t0, t1, icfg)?;
    // Cumulative s at sub-sampled points (Simpson on each accepted step).
    let mut ts = vec![0.0];
    let mut ss = vec![0.0];
    let radius = |y: &[f64; 6]| (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
    for st in &steps {
        const SUB: usize = 4;
        let h = (st.t1 - st.t0) / SUB as f64;
        for k in 0..SUB {
            let a = st.t0 + k as f64 * h;
            let ra = radius(&st.interpolate(a));
            let rm = radius(&st.interpolate(a + 0.5 * h));
            let rb = radius(&st.interpolate(a + h));
            let ds = h / 6.0 * (1.0 / ra + 4.0 / rm + 1.0 / rb);
            ts.push(a + h - d.tau(t0));
            ss.push(ss.last().unwrap() + ds);
        }
    }
    let total = *ss.last().unwrap();
    let mut out = Vec::with_capacity(intervals);
    let mut idx = 1;
    for k in 1..intervals {
        let target = total * k as f64 / intervals as f64;
        while ss[idx] < target {
            idx += 1;
        }
        let w = (target - ss[idx - 1]) / (ss[idx] - ss[idx - 1]);
        let tau = ts[idx - 1] + w * (ts[idx] - ts[idx - 1]);
        out.push(t0 + tau * d.scales.tu);
    }
    out.push(t1);
    Ok(out)
}

impl BaselineOrbit {
    pub fn start(&self) -> Epoch {
        self.knots[0].epoch
    }

    pub fn end(&self) -> Epoch {
        self.knots[self.knots.len() - 1].epoch
    }

    /// Mean spacing of consecutive apolunes (seconds).
    pub fn mean_period(&self) -> f64 {
        let a = &self.apolune_epochs;
        if a.len() < 2 {
            return f64::NAN;
        }
        (a[a.len() - 1] - a[0]) / (a.len() - 1) as f64
    }

    /// Quintic Hermite interpolation of the stored knots; exact at knots.
    pub fn reference_state(&self, t: Epoch) -> Result<StateVector> {
        let (start, end) = (self.start(), self.end());
        if !(t >= start && t <= end) {
            return Err(Error::OutOfRange { t, start, end });
        }
        let i = self.knots.partition_point(|k| k.epoch <= t);
        if i > 0 && self.knots[i - 1].epoch == t {
            return Ok(self.knots[i - 1].state);
        }
        let (a, b) = (&self.knots[i - 1], &self.knots[i]);
        let h = (b.epoch - a.epoch) / self.metadata.tu;
        let s = (t - a.epoch) / (b.epoch - a.epoch);
        Ok(quintic_hermite(a, b, h, s))
    }

    /// Stored apsis epochs inside `[from, to]`, ascending.
    pub fn apsis_epochs(&self, kind: ApsisKind, from: Epoch, to: Epoch) -> Vec<Epoch> {
        let list = match kind {
            ApsisKind::Apolune => &self.apolune_epochs,
            ApsisKind::Perilune => &self.perilune_epochs,
        };
        list.iter().copied().filter(|&e| e >= from && e <= to).collect()
    }

    /// Next apolune strictly after `t`.
    pub fn next_apolune_after(&self, t: Epoch) -> Option<Epoch> {
        let i = self.apolune_epochs.partition_point(|&e| e <= t);
        self.apolune_epochs.get(i).copied()
    }
}

fn quintic_hermite(a: &Knot, b: &Knot, h: f64, s: f64) -> StateVector {
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let s5 = s4 * s;
    let h0 = 1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5;
    let h1 = s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5;
    let h2 = 0.5 * s2 - 1.5 * s3 + 1.5 * s4 - 0.5 * s5;
    let h3 = 0.5 * s3 - s4 + 0.5 * s5;
    let h4 = -4.0 * s3 + 7.0 * s4 - 3.0 * s5;
    let h5 = 10.0 * s3 - 15.0 * s4 + 6.0 * s5;
    // Derivatives with respect to s.
    let d0 = -30.0 * s2 + 60.0 * s3 - 30.0 * s4;
    let d1 = 1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4;
    let d2 = s - 4.5 * s2 + 6.0 * s3 - 2.5 * s4;
    let d3 = 1.5 * s2 - 4.0 * s3 + 2.5 * s4;
    let d4 = -12.0 * s2 + 28.0 * s3 - 15.0 * s4;
    let d5 = 30.0 * s2 - 60.0 * s3 + 30.0 * s4;
    let (p0, v0, a0) = (a.state.r, a.state.v, a.accel);
    let (p1, v1, a1) = (b.state.r, b.state.v, b.accel);
    let r = p0 * h0 + v0 * (h * h1) + a0 * (h * h * h2) + a1 * (h * h * h3) + v1 * (h * h4) + p1 * h5;
    let v = (p0 * d0 + v0 * (h * d1) + a0 * (h * h * d2) + a1 * (h * h * d3) + v1 * (h * d4) + p1 * d5) / h;
    StateVector::new(r, v)
}
