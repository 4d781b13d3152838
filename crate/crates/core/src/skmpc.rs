//! Station-keeping model predictive control.
//!
//! The planner linearizes the flow about the steered trajectory, solves a
//! small second-order cone program for impulsive corrections at successive
//! maneuver anomalies, and repeats until the nonlinear terminal state lands
//! inside the terminal ellipsoid around the baseline apolune. Terminal
//! constraints are resolved in the Earth-Moon rotating frame, where apolune
//! states are nearly invariant.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use nalgebra::{DMatrix, Matrix3, Matrix6, Matrix6x3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::baseline::BaselineOrbit;
use crate::dynamics::{Dynamics, StateVector};
use crate::error::{Error, Result};
use crate::frames::{em_rotating_frame, CanonicalScales, Epoch};
use crate::propagation::{apply_impulse, find_event, propagate, propagate_with_stm, EventSpec, IntegratorConfig};

/// Planner settings. Radii are in km and m/s, angles in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkmpcConfig {
    pub k_maneuvers: usize,
    pub n_target_revs: usize,
    pub theta_man: f64,
    pub eps_r_km: f64,
    pub eps_v_ms: f64,
    pub eps_r_trig_km: f64,
    pub eps_v_trig_ms: f64,
    pub u_max_ms: f64,
    pub max_iterations: usize,
    /// Monitored linearization validity bound: three position (km) and
    /// three velocity (m/s) components in the rotating frame.
    pub trust_region: [f64; 6],
}

impl Default for SkmpcConfig {
    fn default() -> Self {
        SkmpcConfig {
            k_maneuvers: 2,
            n_target_revs: 6,
            theta_man: 200f64.to_radians(),
            eps_r_km: 25.0,
            eps_v_ms: 5.0,
            eps_r_trig_km: 100.0,
            eps_v_trig_ms: 20.0,
            u_max_ms: 1.0,
            max_iterations: 10,
            trust_region: [50.0, 50.0, 50.0, 0.5, 0.5, 0.5],
        }
    }
}

impl SkmpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_maneuvers < 2 || self.k_maneuvers > self.n_target_revs {
            return Err(Error::invalid("need 2 <= k_maneuvers <= n_target_revs"));
        }
        let positive = [self.eps_r_km, self.eps_v_ms, self.u_max_ms];
        if !positive.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::invalid("terminal radii and u_max must be positive"));
        }
        if !(self.eps_r_km < self.eps_r_trig_km && self.eps_v_ms < self.eps_v_trig_ms) {
            return Err(Error::invalid("trigger radii must exceed the terminal radii"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if !self.theta_man.is_finite() || !self.trust_region.iter().all(|v| *v > 0.0) {
            return Err(Error::invalid("theta_man must be finite and the trust region positive"));
        }
        Ok(())
    }
}

/// Terminal radii and control bound in canonical units.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Radii {
    r: f64,
    v: f64,
}

fn radii(eps_r_km: f64, eps_v_ms: f64, scales: &CanonicalScales) -> Radii {
    Radii {
        r: eps_r_km / scales.lu,
        v: eps_v_ms * 1e-3 / scales.vu,
    }
}

/// Splits a 6-vector difference into (km, m/s) norms.
pub fn residual_norms(diff: &Vector6<f64>, scales: &CanonicalScales) -> (f64, f64) {
    (
        diff.fixed_rows::<3>(0).norm() * scales.lu,
        diff.fixed_rows::<3>(3).norm() * scales.vu * 1e3,
    )
}

/// Maneuver epochs and the targeted apolune.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub maneuver_epochs: Vec<Epoch>,
    pub target_epoch: Epoch,
}

/// Places the maneuvers at successive `theta_man` crossings of the free-drift
/// prediction from `x0` and the target at the N-th baseline apolune.
pub fn plan_horizon(
    d: &Dynamics,
    t_invoked: Epoch,
    x0: &StateVector,
    baseline: &BaselineOrbit,
    cfg: &SkmpcConfig,
    icfg: &IntegratorConfig,
) -> Result<Horizon> {
    cfg.validate()?;
    let target_epoch = target_apolune(baseline, t_invoked, cfg)?;
    let period = baseline.mean_period();
    let spec = EventSpec::true_anomaly(cfg.theta_man);
    let mut epochs = vec![t_invoked];
    let (mut t, mut x) = (t_invoked, *x0);
    while epochs.len() < cfg.k_maneuvers {
        let (te, xe) = find_event(d, &x, t, &spec, 1.5 * period, icfg)?
            .ok_or_else(|| Error::Horizon("no maneuver anomaly crossing within 1.5 periods".into()))?;
        // A state estimate sitting just short of the maneuver anomaly
        // crosses it again within moments; that is the same revolution.
        if te - epochs[epochs.len() - 1] < 0.5 * period {
            (t, x) = (te, xe);
            continue;
        }
        if te >= target_epoch {
            return Err(Error::Horizon("maneuver epochs reach past the target apolune".into()));
        }
        epochs.push(te);
        (t, x) = (te, xe);
    }
    Ok(Horizon {
        maneuver_epochs: epochs,
        target_epoch,
    })
}

/// The N-th baseline apolune strictly after `t`.
pub fn target_apolune(baseline: &BaselineOrbit, t: Epoch, cfg: &SkmpcConfig) -> Result<Epoch> {
    baseline
        .apolune_epochs
        .iter()
        .copied()
        .filter(|&e| e > t)
        .nth(cfg.n_target_revs.saturating_sub(1))
        .ok_or_else(|| Error::Horizon(format!("baseline has fewer than {} apolunes after {t:?}", cfg.n_target_revs)))
}

/// True when the uncontrolled terminal state already lies inside the trigger
/// radii, so no maneuver is planned this revolution.
pub fn check_trigger(drift: &Vector6<f64>, reference: &Vector6<f64>, cfg: &SkmpcConfig, scales: &CanonicalScales) -> bool {
    let (dr, dv) = residual_norms(&(drift - reference), scales);
    dr <= cfg.eps_r_trig_km && dv <= cfg.eps_v_trig_ms
}

/// The cone program for one linearization, all in canonical units and
/// resolved in the rotating frame at the target epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocpProblem {
    pub phi_rv_blocks: Vec<Matrix3<f64>>,
    pub phi_vv_blocks: Vec<Matrix3<f64>>,
    pub drift_terminal: Vector6<f64>,
    pub reference_terminal: Vector6<f64>,
    pub eps_r: f64,
    pub eps_v: f64,
    pub u_max: f64,
}

impl SocpProblem {
    pub fn k(&self) -> usize {
        self.phi_rv_blocks.len()
    }

    /// Decision variables: K controls then K slacks.
    pub fn n_variables(&self) -> usize {
        4 * self.k()
    }

    pub fn n_cones(&self) -> usize {
        2 * self.k() + 2
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || self.phi_vv_blocks.len() != k {
            return Err(Error::invalid("SOCP needs matching, non-empty STM block lists"));
        }
        let finite = self
            .phi_rv_blocks
            .iter()
            .chain(&self.phi_vv_blocks)
            .all(|m| m.iter().all(|v| v.is_finite()))
            && self.drift_terminal.iter().chain(self.reference_terminal.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("SOCP data must be finite"));
        }
        if !(self.eps_r > 0.0 && self.eps_v > 0.0 && self.u_max > 0.0) {
            return Err(Error::invalid("SOCP radii and control bound must be positive"));
        }
        Ok(())
    }

    /// Linear terminal state for the given rotating-frame controls.
    pub fn terminal(&self, controls: &[Vector3<f64>]) -> Vector6<f64> {
        let mut x = self.drift_terminal;
        for (k, u) in controls.iter().enumerate() {
            let (dr, dv) = (self.phi_rv_blocks[k] * u, self.phi_vv_blocks[k] * u);
            x += Vector6::new(dr.x, dr.y, dr.z, dv.x, dv.y, dv.z);
        }
        x
    }

    /// Largest relative constraint violation of `controls`, evaluated from
    /// the problem data alone. Non-positive means feasible.
    pub fn max_violation(&self, controls: &[Vector3<f64>]) -> f64 {
        let e = self.terminal(controls) - self.reference_terminal;
        let mut worst = (e.fixed_rows::<3>(0).norm() - self.eps_r) / self.eps_r;
        worst = worst.max((e.fixed_rows::<3>(3).norm() - self.eps_v) / self.eps_v);
        for u in controls {
            worst = worst.max((u.norm() - self.u_max) / self.u_max);
        }
        worst
    }
}

/// Builds the cone program from rotating-frame terminal data and impulse
/// sensitivities `blocks[k]` (6×3, terminal state per unit impulse at t_k).
pub fn assemble_socp(
    drift: &Vector6<f64>,
    reference: &Vector6<f64>,
    blocks: &[Matrix6x3<f64>],
    cfg: &SkmpcConfig,
    scales: &CanonicalScales,
) -> Result<SocpProblem> {
    let eps = radii(cfg.eps_r_km, cfg.eps_v_ms, scales);
    let p = SocpProblem {
        phi_rv_blocks: blocks.iter().map(|b| b.fixed_view::<3, 3>(0, 0).into()).collect(),
        phi_vv_blocks: blocks.iter().map(|b| b.fixed_view::<3, 3>(3, 0).into()).collect(),
        drift_terminal: *drift,
        reference_terminal: *reference,
        eps_r: eps.r,
        eps_v: eps.v,
        u_max: cfg.u_max_ms * 1e-3 / scales.vu,
    };
    p.validate()?;
    Ok(p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SocpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
    NumericalFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocpSolution {
    /// Rotating-frame impulses (canonical).
    pub controls: Vec<Vector3<f64>>,
    /// Σ‖u_k‖ (canonical).
    pub objective: f64,
    pub status: SocpStatus,
    pub iterations: u32,
    pub duality_gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

/// Solves the cone program with an interior-point method.
///
/// Controls are scaled by `eps_v` and each terminal cone by its radius so
/// the solver sees entries of order one.
pub fn solve_socp(p: &SocpProblem) -> Result<SocpSolution> {
    p.validate()?;
    let k = p.k();
    let n = p.n_variables();
    let u_ref = p.eps_v;
    let d = p.drift_terminal - p.reference_terminal;

    let (mut rows, mut cols, mut vals) = (Vec::new(), Vec::new(), Vec::new());
    let mut b = Vec::new();
    let mut cones = Vec::new();
    let mut push = |r: usize, c: usize, v: f64| {
        if v != 0.0 {
            rows.push(r);
            cols.push(c);
            vals.push(v);
        }
    };
    let mut row = 0;
    // ‖u_k‖ ≤ s_k
    for j in 0..k {
        push(row, 3 * k + j, -1.0);
        for i in 0..3 {
            push(row + 1 + i, 3 * j + i, -1.0);
        }
        b.extend([0.0; 4]);
        cones.push(SupportedConeT::SecondOrderConeT(4));
        row += 4;
    }
    // ‖u_k‖ ≤ u_max
    for j in 0..k {
        for i in 0..3 {
            push(row + 1 + i, 3 * j + i, -1.0);
        }
        b.extend([p.u_max / u_ref, 0.0, 0.0, 0.0]);
        cones.push(SupportedConeT::SecondOrderConeT(4));
        row += 4;
    }
    // Terminal position and velocity balls.
    for (blocks, offset, radius) in [(&p.phi_rv_blocks, 0, p.eps_r), (&p.phi_vv_blocks, 3, p.eps_v)] {
        b.push(1.0);
        for i in 0..3 {
            b.push(d[offset + i] / radius);
            for (j, m) in blocks.iter().enumerate() {
                for c in 0..3 {
                    push(row + 1 + i, 3 * j + c, -m[(i, c)] * u_ref / radius);
                }
            }
        }
        cones.push(SupportedConeT::SecondOrderConeT(4));
        row += 4;
    }

    let a = CscMatrix::new_from_triplets(row, n, rows, cols, vals);
    let pmat = CscMatrix::<f64>::zeros((n, n));
    let mut q = vec![0.0; n];
    q[3 * k..].fill(1.0);
    let settings = DefaultSettings {
        verbose: false,
        max_iter: 100,
        tol_gap_abs: 1e-10,
        tol_gap_rel: 1e-10,
        tol_feas: 1e-10,
        max_threads: 1,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&pmat, &q, &a, &b, &cones, settings)
        .map_err(|e| Error::invalid(format!("SOCP setup rejected: {e}")))?;
    solver.solve();
    let sol = &solver.solution;
    let status = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SocpStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SocpStatus::Infeasible,
        SolverStatus::MaxIterations | SolverStatus::MaxTime => SocpStatus::MaxIterations,
        _ => SocpStatus::NumericalFailure,
    };
    let controls: Vec<Vector3<f64>> = (0..k)
        .map(|j| Vector3::new(sol.x[3 * j], sol.x[3 * j + 1], sol.x[3 * j + 2]) * u_ref)
        .collect();
    let info = &solver.info;
    Ok(SocpSolution {
        objective: controls.iter().map(|u| u.norm()).sum(),
        controls: if status == SocpStatus::Optimal { controls } else { vec![Vector3::zeros(); k] },
        status,
        iterations: sol.iterations,
        duality_gap: info.gap_abs * u_ref,
        primal_residual: info.res_primal,
        dual_residual: info.res_dual,
    })
}

/// Numerical rank of the stacked impulse sensitivities, using singular
/// values above 1e-10 of the largest.
pub fn controllability_rank(blocks: &[Matrix6x3<f64>]) -> usize {
    if blocks.is_empty() {
        return 0;
    }
    let mut m = DMatrix::zeros(6, 3 * blocks.len());
    for (k, blk) in blocks.iter().enumerate() {
        m.view_mut((0, 3 * k), (6, 3)).copy_from(blk);
    }
    let sv = m.singular_values();
    let top = sv.max();
    if !(top > 0.0) {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-10 * top).count()
}

/// Record of one pass through the sequential loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Nonlinear terminal error in the rotating frame (km, m/s).
    pub terminal_position_error_km: f64,
    pub terminal_velocity_error_ms: f64,
    /// Nonlinear minus linearly predicted terminal state from the previous
    /// iteration (km ×3, m/s ×3); absent on the first pass.
    pub linearization_error: Option<[f64; 6]>,
    pub trust_region_exceeded: bool,
    pub socp_status: Option<SocpStatus>,
    /// Σ‖u_k‖ of this increment (m/s).
    pub socp_objective_ms: Option<f64>,
    pub socp_iterations: Option<u32>,
}

/// Output of one planner invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManeuverPlan {
    pub epochs: Vec<Epoch>,
    /// Cumulative inertial impulses (canonical); only the first is executed.
    pub controls: Vec<Vector3<f64>>,
    pub target_epoch: Epoch,
    pub iterations_used: usize,
    pub converged: bool,
    /// Set when a cone program ended without an optimal solution.
    pub failure: Option<SocpStatus>,
    pub diagnostics: Vec<IterationRecord>,
}

impl ManeuverPlan {
    pub fn first_control(&self) -> Vector3<f64> {
        self.controls[0]
    }
}

/// Steered trajectory through the maneuver epochs: terminal state and the
/// sensitivity Φ(t_N, t_k) of each impulse.
fn steered(
    d: &Dynamics,
    x0: &StateVector,
    h: &Horizon,
    controls: &[Vector3<f64>],
    icfg: &IntegratorConfig,
) -> Result<(StateVector, Vec<Matrix6<f64>>)> {
    let k = h.maneuver_epochs.len();
    let mut x = *x0;
    let mut segments = Vec::with_capacity(k);
    for j in 0..k {
        let t = h.maneuver_epochs[j];
        let next = h.maneuver_epochs.get(j + 1).copied().unwrap_or(h.target_epoch);
        let (xf, phi) = propagate_with_stm(d, &apply_impulse(&x, &controls[j]), t, next, icfg)?;
        segments.push(phi.0);
        x = xf;
    }
    let mut sens = vec![Matrix6::identity(); k];
    let mut acc = Matrix6::identity();
    for j in (0..k).rev() {
        acc *= segments[j];
        sens[j] = acc;
    }
    Ok((x, sens))
}

/// Uncontrolled terminal state, resolved in the rotating frame at `target`.
pub fn free_drift_terminal(
    d: &Dynamics,
    t0: Epoch,
    x0: &StateVector,
    target: Epoch,
    icfg: &IntegratorConfig,
) -> Result<Vector6<f64>> {
    let x = propagate(d, x0, t0, target, icfg)?;
    Ok(em_rotating_frame(target, d.ephemeris()).state_to_frame(&x, d.scales.tu).to_vector())
}

/// Baseline state at `target` in the rotating frame.
pub fn reference_terminal(d: &Dynamics, baseline: &BaselineOrbit, target: Epoch) -> Result<Vector6<f64>> {
    let x = baseline.reference_state(target)?;
    Ok(em_rotating_frame(target, d.ephemeris()).state_to_frame(&x, d.scales.tu).to_vector())
}

/// Sequential linearization: re-propagate the steered trajectory, stop once
/// its terminal state is strictly inside the terminal set, otherwise add the
/// cone-program correction to the cumulative controls.
pub fn sequential_skmpc(
    d: &Dynamics,
    t0: Epoch,
    x0: &StateVector,
    baseline: &BaselineOrbit,
    cfg: &SkmpcConfig,
    icfg: &IntegratorConfig,
) -> Result<ManeuverPlan> {
    let horizon = plan_horizon(d, t0, x0, baseline, cfg, icfg)?;
    sequential_skmpc_on(d, x0, &horizon, baseline, cfg, icfg)
}

/// [`sequential_skmpc`] over a precomputed horizon.
pub fn sequential_skmpc_on(
    d: &Dynamics,
    x0: &StateVector,
    horizon: &Horizon,
    baseline: &BaselineOrbit,
    cfg: &SkmpcConfig,
    icfg: &IntegratorConfig,
) -> Result<ManeuverPlan> {
    cfg.validate()?;
    let k = horizon.maneuver_epochs.len();
    let eph = d.ephemeris();
    let tu = d.scales.tu;
    let tn = horizon.target_epoch;
    let m_n = em_rotating_frame(tn, eph).state_matrix(tu);
    let to_em = |x: &StateVector| em_rotating_frame(tn, eph).state_to_frame(x, tu).to_vector();
    let rotations: Vec<Matrix3<f64>> = horizon
        .maneuver_epochs
        .iter()
        .map(|&t| em_rotating_frame(t, eph).rotation)
        .collect();
    let reference = reference_terminal(d, baseline, tn)?;
    let eps = radii(cfg.eps_r_km, cfg.eps_v_ms, &d.scales);
    // The cone program aims slightly inside the set so that its boundary
    // solutions pass the strict acceptance check despite round-off.
    let (accept_margin, aim_margin) = (1e-9, 1e-6);

    let mut controls = vec![Vector3::zeros(); k];
    let mut diagnostics = Vec::new();
    let mut predicted: Option<Vector6<f64>> = None;
    let plan = |controls: Vec<Vector3<f64>>, iterations_used, converged, failure, diagnostics| ManeuverPlan {
        epochs: horizon.maneuver_epochs.clone(),
        controls,
        target_epoch: tn,
        iterations_used,
        converged,
        failure,
        diagnostics,
    };

    for iteration in 0..=cfg.max_iterations {
        let (xn, sens) = steered(d, x0, horizon, &controls, icfg)?;
        let terminal = to_em(&xn);
        let err = terminal - reference;
        let (er, ev) = residual_norms(&err, &d.scales);
        let mut record = IterationRecord {
            iteration,
            terminal_position_error_km: er,
            terminal_velocity_error_ms: ev,
            linearization_error: None,
            trust_region_exceeded: false,
            socp_status: None,
            socp_objective_ms: None,
            socp_iterations: None,
        };
        if let Some(pred) = predicted {
            let gap = terminal - pred;
            let phys: [f64; 6] = std::array::from_fn(|i| {
                if i < 3 {
                    gap[i] * d.scales.lu
                } else {
                    gap[i] * d.scales.vu * 1e3
                }
            });
            record.trust_region_exceeded = phys.iter().zip(&cfg.trust_region).any(|(g, t)| g.abs() > *t);
            if record.trust_region_exceeded {
                log::warn!("iteration {iteration}: linearization error {phys:?} exceeds the trust region");
            } else {
                log::debug!("iteration {iteration}: linearization error {phys:?}");
            }
            record.linearization_error = Some(phys);
        }
        log::debug!("iteration {iteration}: terminal error {er:.4} km, {ev:.5} m/s");
        let inside = err.fixed_rows::<3>(0).norm() < eps.r * (1.0 - accept_margin)
            && err.fixed_rows::<3>(3).norm() < eps.v * (1.0 - accept_margin);
        if inside || iteration == cfg.max_iterations {
            diagnostics.push(record);
            return Ok(plan(controls, iteration, inside, None, diagnostics));
        }

        let blocks: Vec<Matrix6x3<f64>> = sens
            .iter()
            .zip(&rotations)
            .map(|(s, r)| m_n * s.fixed_view::<6, 3>(0, 3) * r.transpose())
            .collect();
        let mut problem = assemble_socp(&terminal, &reference, &blocks, cfg, &d.scales)?;
        problem.eps_r *= 1.0 - aim_margin;
        problem.eps_v *= 1.0 - aim_margin;
        let sol = solve_socp(&problem)?;
        record.socp_status = Some(sol.status);
        record.socp_iterations = Some(sol.iterations);
        if sol.status != SocpStatus::Optimal {
            log::warn!("iteration {iteration}: cone program ended {:?}", sol.status);
            diagnostics.push(record);
            return Ok(plan(controls, iteration + 1, false, Some(sol.status), diagnostics));
        }
        record.socp_objective_ms = Some(sol.objective * d.scales.vu * 1e3);
        predicted = Some(problem.terminal(&sol.controls));
        for (c, (u, r)) in controls.iter_mut().zip(sol.controls.iter().zip(&rotations)) {
            *c += r.transpose() * u;
        }
        diagnostics.push(record);
    }
    unreachable!("the loop returns on its last iteration")
}
