//! Closed-loop station keeping under navigation, execution, and dynamics
//! errors, plus Monte-Carlo campaigns over it.
//!
//! The truth trajectory runs with dispersed SRP parameters. The filter and
//! planner only see the nominal model, the noisy measurements, and the
//! commanded impulses.

mod errors;
mod export;
mod metrics;

pub use errors::{corrupt_maneuver, desaturation_impulse, sample_srp_dispersion, ErrorModelConfig};
pub use export::{write_figure_csvs, write_run_artifacts, FIGURE_FILES, RUN_FILES};
pub use metrics::{compute_metrics, summarize, MonteCarloSummary, PeriluneDeviation, RunMetrics, SampleAbort, Stats};

use std::collections::VecDeque;

use nalgebra::{Matrix6, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{ApsisKind, BaselineOrbit};
use crate::dynamics::{Dynamics, SpacecraftParams, StateVector};
use crate::error::{Error, Result};
use crate::frames::{em_rotating_frame, Epoch};
use crate::navigation::{
    apply_maneuver_to_estimate, ekf_predict, iterated_ekf_update, measurement_model, tracking_windows, DynamicsTransition,
    FilterEstimate, MeasurementSample, ProcessNoiseConfig, TrackingSchedule,
};
use crate::propagation::{find_event, propagate, EventSpec, IntegratorConfig};
use crate::skmpc::{
    check_trigger, free_drift_terminal, plan_horizon, reference_terminal, residual_norms, sequential_skmpc_on,
    target_apolune, IterationRecord, SkmpcConfig, SocpStatus,
};

pub const HISTORY_SCHEMA_VERSION: u32 = 1;

/// First impulses below this (m/s) are not executed.
pub const MIN_IMPULSE_MS: f64 = 1e-6;

/// Smallest measurement sigmas the filter will weight with (km, km/s).
/// Only reached when measurement noise is configured as zero.
const MIN_RANGE_SIGMA: f64 = 1e-6;
const MIN_RANGE_RATE_SIGMA: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_revolutions: usize,
    pub rng_seed: u64,
    /// Revolutions excluded from estimation statistics.
    pub burn_in_revolutions: usize,
    pub skmpc: SkmpcConfig,
    pub tracking: TrackingSchedule,
    pub errors: ErrorModelConfig,
    pub process_noise: ProcessNoiseConfig,
    /// Relinearizations per measurement update; 1 is the plain EKF.
    pub update_iterations: usize,
    /// Filter prediction and planning.
    pub integrator: IntegratorConfig,
    /// Truth propagation. Tighter than `integrator` because integration
    /// error is amplified by roughly 2x per revolution.
    pub truth_integrator: IntegratorConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_revolutions: 50,
            rng_seed: 0,
            burn_in_revolutions: 2,
            skmpc: SkmpcConfig::default(),
            tracking: TrackingSchedule::default(),
            errors: ErrorModelConfig::default(),
            process_noise: ProcessNoiseConfig::default(),
            update_iterations: 1,
            integrator: IntegratorConfig::default(),
            truth_integrator: IntegratorConfig {
                rel_tol: 1e-14,
                abs_tol: 1e-14,
                ..IntegratorConfig::default()
            },
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.update_iterations == 0 {
            return Err(Error::invalid("update_iterations must be at least 1"));
        }
        if self.n_revolutions == 0 {
            return Err(Error::invalid("n_revolutions must be at least 1"));
        }
        if !(self.process_noise.sigma_p >= 0.0) {
            return Err(Error::invalid("sigma_p must be non-negative"));
        }
        self.skmpc.validate()?;
        self.tracking.validate()?;
        self.errors.validate()?;
        self.integrator.validate()?;
        self.truth_integrator.validate()
    }

    /// Checks that `baseline` reaches the last targeted apolune.
    pub fn check_baseline(&self, baseline: &BaselineOrbit) -> Result<()> {
        let needed = self.n_revolutions + self.skmpc.n_target_revs + 2;
        if baseline.apolune_epochs.len() < needed {
            return Err(Error::Horizon(format!(
                "scenario needs a baseline with at least {needed} apolunes, found {}",
                baseline.apolune_epochs.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManeuverDecision {
    /// Trigger satisfied: the free drift stays near the baseline.
    Skipped,
    Executed,
    /// The planner failed; the revolution continues uncontrolled.
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanDiagnostics {
    pub iterations_used: usize,
    pub converged: bool,
    pub socp_failure: Option<SocpStatus>,
    pub iterations: Vec<IterationRecord>,
}

/// One maneuver opportunity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevolutionRecord {
    pub index: usize,
    pub epoch: Epoch,
    pub decision: ManeuverDecision,
    /// Free-drift terminal error of the estimate (km, m/s).
    pub drift_position_error_km: f64,
    pub drift_velocity_error_ms: f64,
    /// Inertial impulses (m/s).
    pub commanded_dv_ms: [f64; 3],
    pub executed_dv_ms: [f64; 3],
    pub commanded_norm_ms: f64,
    pub executed_norm_ms: f64,
    pub plan: Option<PlanDiagnostics>,
    pub failure: Option<String>,
    /// Pre-maneuver estimate minus truth in the rotating frame
    /// (km ×3, m/s ×3) and the filter's matching 3σ.
    pub estimation_error_em: [f64; 6],
    pub estimation_sigma3_em: [f64; 6],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    PreManeuver,
    Update,
}

/// Inertial estimation error at a filter epoch (km ×3, m/s ×3).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSample {
    pub epoch: Epoch,
    pub revolution: usize,
    pub kind: SampleKind,
    pub error: [f64; 6],
    pub sigma3: [f64; 6],
    /// Truth minus baseline in the rotating frame (km ×3, m/s ×3).
    pub baseline_deviation_em: [f64; 6],
}

/// Truth apsis pass (canonical inertial state).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassRecord {
    pub kind: ApsisKind,
    pub epoch: Epoch,
    pub state: StateVector,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesatRecord {
    pub epoch: Epoch,
    pub anomaly_deg: f64,
    pub dv_ms: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub schema_version: u32,
    pub rng_seed: u64,
    pub stream: u64,
    pub delta_am_rel: f64,
    pub delta_cr_rel: f64,
    pub truth_spacecraft: SpacecraftParams,
    pub filter_spacecraft: SpacecraftParams,
    pub start_epoch: Epoch,
    pub end_epoch: Epoch,
    pub revolutions: Vec<RevolutionRecord>,
    pub samples: Vec<FilterSample>,
    pub passes: Vec<PassRecord>,
    pub desaturations: Vec<DesatRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum TruthEvent {
    Maneuver,
    Pass(ApsisKind),
    Desat(f64),
}

/// Earliest of the `specs` crossings within `horizon` seconds; events that
/// coincide to the millisecond are returned together in `specs` order.
fn next_event(
    d: &Dynamics,
    x: &StateVector,
    t: Epoch,
    specs: &[(EventSpec, TruthEvent)],
    horizon: f64,
    icfg: &IntegratorConfig,
) -> Result<Option<(Epoch, StateVector, Vec<TruthEvent>)>> {
    let mut hits = Vec::new();
    for (spec, ev) in specs {
        if let Some((te, xe)) = find_event(d, x, t, spec, horizon, icfg)? {
            hits.push((te, xe, *ev));
        }
    }
    let Some(first) = hits.iter().map(|h| h.0).min_by(|a, b| a.total_cmp(b)) else {
        return Ok(None);
    };
    let state = hits.iter().find(|h| h.0 == first).map(|h| h.1).unwrap_or(*x);
    let events = hits.iter().filter(|h| h.0 - first < 1e-3).map(|h| h.2).collect();
    Ok(Some((first, state, events)))
}

fn to_physical(x: &Vector6<f64>, lu: f64, vu: f64) -> [f64; 6] {
    std::array::from_fn(|i| if i < 3 { x[i] * lu } else { x[i] * vu * 1e3 })
}

struct Loop<'a> {
    nominal: &'a Dynamics,
    truth: Dynamics,
    baseline: &'a BaselineOrbit,
    scn: &'a ScenarioConfig,
    rng: ChaCha8Rng,
    t: Epoch,
    x: StateVector,
    est: FilterEstimate,
    history: RunHistory,
}

impl Loop<'_> {
    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    fn predict(&mut self, to: Epoch) -> Result<()> {
        let model = DynamicsTransition {
            dynamics: self.nominal,
            cfg: &self.scn.integrator,
        };
        self.est = ekf_predict(&model, &self.est, to, &self.scn.process_noise)?;
        Ok(())
    }

    fn inertial_sample(&self, revolution: usize, kind: SampleKind) -> Result<FilterSample> {
        let s = &self.nominal.scales;
        let err = self.est.x_hat.to_vector() - self.x.to_vector();
        let sig = Vector6::from(self.est.sigmas()) * 3.0;
        let m = em_rotating_frame(self.t, self.nominal.ephemeris()).state_matrix(s.tu);
        let dev = m * (self.x.to_vector() - self.baseline.reference_state(self.t)?.to_vector());
        Ok(FilterSample {
            epoch: self.t,
            revolution,
            kind,
            error: to_physical(&err, s.lu, s.vu),
            sigma3: to_physical(&sig, s.lu, s.vu),
            baseline_deviation_em: to_physical(&dev, s.lu, s.vu),
        })
    }

    fn measure(&mut self, revolution: usize) -> Result<()> {
        let s = self.nominal.scales;
        let e = &self.scn.errors;
        let (sr, srr) = (e.range_sigma_m * 1e-3 / 3.0, e.range_rate_sigma_mms * 1e-6 / 3.0);
        let (h, _) = measurement_model(&self.x)?;
        let (nr, nrr) = (self.normal(), self.normal());
        let sample = MeasurementSample {
            epoch: self.t,
            range: h[0] * s.lu + sr * nr,
            range_rate: h[1] * s.vu + srr * nrr,
            sigma_range: sr.max(MIN_RANGE_SIGMA),
            sigma_range_rate: srr.max(MIN_RANGE_RATE_SIGMA),
        };
        self.predict(self.t)?;
        self.est = iterated_ekf_update(&self.est, &sample, &s, self.scn.update_iterations)?;
        let rec = self.inertial_sample(revolution, SampleKind::Update)?;
        self.history.samples.push(rec);
        Ok(())
    }

    /// Advances truth to its next maneuver-anomaly crossing, processing
    /// measurements, desaturations, and apsis passes on the way.
    fn advance(&mut self, revolution: usize, mut pending: VecDeque<Epoch>) -> Result<()> {
        let cfg = &self.scn.skmpc;
        let mut specs = vec![
            (EventSpec::true_anomaly(cfg.theta_man), TruthEvent::Maneuver),
            (EventSpec::perilune(), TruthEvent::Pass(ApsisKind::Perilune)),
            (EventSpec::apolune(), TruthEvent::Pass(ApsisKind::Apolune)),
        ];
        for &a in &self.scn.errors.desat_anomalies_deg {
            specs.push((EventSpec::true_anomaly(a.to_radians()), TruthEvent::Desat(a)));
        }
        let period = self.baseline.mean_period();
        let icfg = self.scn.truth_integrator;
        // Impulses move the osculating anomaly, so a crossing can re-fire
        // right after the event that caused it. Each event kind is ignored
        // for half a period after it last fired.
        let mut last_fired: Vec<(TruthEvent, Epoch)> = vec![(TruthEvent::Maneuver, self.t)];
        loop {
            let horizon = match pending.front() {
                Some(&m) if m <= self.t => {
                    pending.pop_front();
                    self.measure(revolution)?;
                    continue;
                }
                Some(&m) => m - self.t,
                None => 1.5 * period,
            };
            match next_event(&self.truth, &self.x, self.t, &specs, horizon, &icfg)? {
                Some((te, xe, events)) => {
                    self.t = te;
                    self.x = xe;
                    let mut arrived = false;
                    for ev in events {
                        if let Some((_, t_last)) = last_fired.iter().find(|(e, _)| *e == ev) {
                            if te - *t_last < 0.5 * period {
                                continue;
                            }
                        }
                        last_fired.retain(|(e, _)| *e != ev);
                        last_fired.push((ev, te));
                        match ev {
                            TruthEvent::Maneuver => arrived = true,
                            TruthEvent::Pass(kind) => self.history.passes.push(PassRecord {
                                kind,
                                epoch: te,
                                state: xe,
                            }),
                            TruthEvent::Desat(anomaly) => {
                                let dv = desaturation_impulse(&self.scn.errors, &mut self.rng);
                                self.x.v += dv * 1e-3 / self.nominal.scales.vu;
                                self.history.desaturations.push(DesatRecord {
                                    epoch: te,
                                    anomaly_deg: anomaly,
                                    dv_ms: dv.into(),
                                });
                            }
                        }
                    }
                    if arrived {
                        return Ok(());
                    }
                }
                None if pending.is_empty() => {
                    return Err(Error::PropagationFailure {
                        epoch: self.t,
                        last_state: Box::new(self.x),
                        reason: "no maneuver-anomaly crossing within 1.5 periods".into(),
                    })
                }
                None => {
                    let m = pending.pop_front().expect("pending is non-empty");
                    self.x = propagate(&self.truth, &self.x, self.t, m, &icfg)?;
                    self.t = m;
                    self.measure(revolution)?;
                }
            }
        }
    }

    /// Sample epochs of the tracking windows up to the predicted next
    /// maneuver.
    fn schedule(&self) -> Result<VecDeque<Epoch>> {
        let period = self.baseline.mean_period();
        let spec = EventSpec::true_anomaly(self.scn.skmpc.theta_man);
        // Skip half a period first: right after an impulse the osculating
        // anomaly can re-cross the maneuver value.
        let icfg = &self.scn.integrator;
        let t_half = self.t + 0.5 * period;
        let x_half = propagate(self.nominal, &self.est.x_hat, self.t, t_half, icfg)?;
        let next = find_event(self.nominal, &x_half, t_half, &spec, period, icfg)?
            .map(|(te, _)| te)
            .unwrap_or(self.t + period);
        Ok(tracking_windows(self.t, next, &self.scn.tracking)?.sample_epochs().into())
    }

    fn maneuver(&mut self, index: usize) -> Result<()> {
        let d = self.nominal;
        let s = d.scales;
        let cfg = &self.scn.skmpc;
        let icfg = &self.scn.integrator;
        self.predict(self.t)?;
        let pre = self.inertial_sample(index, SampleKind::PreManeuver)?;
        self.history.samples.push(pre);

        let m = em_rotating_frame(self.t, d.ephemeris()).state_matrix(s.tu);
        let err = m * (self.est.x_hat.to_vector() - self.x.to_vector());
        let cov = m * self.est.p * m.transpose();
        let sig = Vector6::from_fn(|i, _| 3.0 * cov[(i, i)].max(0.0).sqrt());

        let target = target_apolune(self.baseline, self.t, cfg)?;
        let reference = reference_terminal(d, self.baseline, target)?;
        let drift = free_drift_terminal(d, self.t, &self.est.x_hat, target, icfg)?;
        let (dr, dv) = residual_norms(&(drift - reference), &s);
        let mut record = RevolutionRecord {
            index,
            epoch: self.t,
            decision: ManeuverDecision::Skipped,
            drift_position_error_km: dr,
            drift_velocity_error_ms: dv,
            commanded_dv_ms: [0.0; 3],
            executed_dv_ms: [0.0; 3],
            commanded_norm_ms: 0.0,
            executed_norm_ms: 0.0,
            plan: None,
            failure: None,
            estimation_error_em: to_physical(&err, s.lu, s.vu),
            estimation_sigma3_em: to_physical(&sig, s.lu, s.vu),
        };
        if check_trigger(&drift, &reference, cfg, &s) {
            log::debug!("revolution {index}: trigger satisfied, no maneuver");
            self.history.revolutions.push(record);
            return Ok(());
        }

        let plan = plan_horizon(d, self.t, &self.est.x_hat, self.baseline, cfg, icfg)
            .and_then(|h| sequential_skmpc_on(d, &self.est.x_hat, &h, self.baseline, cfg, icfg));
        let plan = match plan {
            Ok(p) => p,
            Err(e @ (Error::PropagationFailure { .. } | Error::Horizon(_) | Error::Singularity(_))) => {
                log::warn!("revolution {index}: planner failed: {e}");
                record.decision = ManeuverDecision::Failed;
                record.failure = Some(e.to_string());
                self.history.revolutions.push(record);
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        record.plan = Some(PlanDiagnostics {
            iterations_used: plan.iterations_used,
            converged: plan.converged,
            socp_failure: plan.failure,
            iterations: plan.diagnostics.clone(),
        });
        if let Some(status) = plan.failure {
            log::warn!("revolution {index}: cone program ended {status:?}; no maneuver");
            record.decision = ManeuverDecision::Failed;
            record.failure = Some(format!("cone program status {status:?}"));
            self.history.revolutions.push(record);
            return Ok(());
        }
        if !plan.converged {
            log::warn!("revolution {index}: planner hit the iteration limit; executing its best plan");
        }

        let u0 = plan.first_control();
        let commanded = u0 * s.vu * 1e3;
        if commanded.norm() < MIN_IMPULSE_MS {
            log::debug!("revolution {index}: plan defers all control to later impulses");
            self.history.revolutions.push(record);
            return Ok(());
        }
        let executed = corrupt_maneuver(&commanded, &self.scn.errors, &mut self.rng);
        self.x.v += executed * 1e-3 / s.vu;
        let e = &self.scn.errors;
        let sigma_abs = e.dv_sigma_abs_mms * 1e-6 / 3.0 / s.vu;
        let sigma_rel = e.dv_sigma_rel_pct / 100.0 / 3.0;
        self.est = apply_maneuver_to_estimate(&self.est, &u0, sigma_abs, sigma_rel);

        record.decision = ManeuverDecision::Executed;
        record.commanded_dv_ms = commanded.into();
        record.executed_dv_ms = executed.into();
        record.commanded_norm_ms = commanded.norm();
        record.executed_norm_ms = executed.norm();
        self.history.revolutions.push(record);
        Ok(())
    }
}

/// First maneuver-anomaly crossing of the baseline, where every run starts.
pub fn start_point(d: &Dynamics, baseline: &BaselineOrbit, scn: &ScenarioConfig) -> Result<(Epoch, StateVector)> {
    let ta = *baseline
        .apolune_epochs
        .first()
        .ok_or_else(|| Error::Horizon("baseline has no apolune".into()))?;
    // Propagate from a segment-boundary knot: those are the corrected
    // shooting nodes, while interior knots and interpolated states carry
    // the segment's own integration error.
    let per_segment = (baseline.metadata.knots_per_revolution / 2).max(1);
    let knot = baseline
        .knots
        .iter()
        .step_by(per_segment)
        .take_while(|k| k.epoch <= ta)
        .last()
        .unwrap_or(&baseline.knots[0]);
    let spec = EventSpec::true_anomaly(scn.skmpc.theta_man);
    find_event(d, &knot.state, knot.epoch, &spec, baseline.mean_period(), &scn.truth_integrator)?
        .ok_or_else(|| Error::Horizon("maneuver anomaly not reached within one baseline period".into()))
}

/// Runs one closed-loop sample on random stream 0 of `scn.rng_seed`.
pub fn run_closed_loop(d: &Dynamics, baseline: &BaselineOrbit, scn: &ScenarioConfig) -> Result<RunHistory> {
    run_sample(d, baseline, scn, 0)
}

/// Runs one closed-loop sample on the given random stream of
/// `scn.rng_seed`; streams are independent.
pub fn run_sample(d: &Dynamics, baseline: &BaselineOrbit, scn: &ScenarioConfig, stream: u64) -> Result<RunHistory> {
    scn.validate()?;
    scn.check_baseline(baseline)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scn.rng_seed);
    rng.set_stream(stream);

    let (delta_am, delta_cr) = sample_srp_dispersion(&scn.errors, &mut rng);
    let nominal_sc = d.spacecraft;
    let truth_sc = SpacecraftParams {
        area_to_mass: nominal_sc.area_to_mass * (1.0 + delta_am),
        cr: nominal_sc.cr * (1.0 + delta_cr),
    };
    let truth = d.with_spacecraft(truth_sc)?;

    let s = d.scales;
    let (t0, x0) = start_point(d, baseline, scn)?;
    let sr = scn.errors.init_pos_sigma_km / 3.0 / s.lu;
    let sv = scn.errors.init_vel_sigma_mms * 1e-6 / 3.0 / s.vu;
    let noise: Vector6<f64> = Vector6::from_fn(|i, _| {
        let n: f64 = StandardNormal.sample(&mut rng);
        n * if i < 3 { sr } else { sv }
    });
    let p0 = Matrix6::from_diagonal(&Vector6::new(sr * sr, sr * sr, sr * sr, sv * sv, sv * sv, sv * sv));
    let est = FilterEstimate {
        x_hat: StateVector::from_vector(&(x0.to_vector() + noise)),
        p: p0,
        epoch: t0,
    };

    let mut run = Loop {
        nominal: d,
        truth,
        baseline,
        scn,
        rng,
        t: t0,
        x: x0,
        est,
        history: RunHistory {
            schema_version: HISTORY_SCHEMA_VERSION,
            rng_seed: scn.rng_seed,
            stream,
            delta_am_rel: delta_am,
            delta_cr_rel: delta_cr,
            truth_spacecraft: truth_sc,
            filter_spacecraft: nominal_sc,
            start_epoch: t0,
            end_epoch: t0,
            revolutions: Vec::new(),
            samples: Vec::new(),
            passes: Vec::new(),
            desaturations: Vec::new(),
        },
    };
    let mut pending = run.schedule()?;
    for rev in 0..scn.n_revolutions {
        run.advance(rev, pending)?;
        run.maneuver(rev)?;
        pending = run.schedule()?;
        log::info!("stream {stream}: revolution {} of {} done", rev + 1, scn.n_revolutions);
    }
    run.history.end_epoch = run.t;
    Ok(run.history)
}

/// Outcome of one Monte-Carlo sample.
pub type SampleOutcome = std::result::Result<(RunHistory, RunMetrics), SampleAbort>;

/// Runs `n_samples` independent samples on streams 0..n with at most
/// `jobs` worker threads. Results come back in stream order whatever the
/// scheduling, so the summary does not depend on `jobs`.
pub fn run_monte_carlo(
    d: &Dynamics,
    baseline: &BaselineOrbit,
    scn: &ScenarioConfig,
    n_samples: usize,
    jobs: usize,
) -> Result<(MonteCarloSummary, Vec<SampleOutcome>)> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    scn.validate()?;
    scn.check_baseline(baseline)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<SampleOutcome> = pool.install(|| {
        (0..n_samples as u64)
            .into_par_iter()
            .map(|stream| match run_sample(d, baseline, scn, stream) {
                Ok(h) => {
                    let m = compute_metrics(&h, baseline, d, scn.burn_in_revolutions);
                    Ok((h, m))
                }
                Err(e) => {
                    log::warn!("sample {stream} aborted: {e}");
                    Err(SampleAbort {
                        stream,
                        reason: e.to_string(),
                    })
                }
            })
            .collect()
    });
    let summary = summarize(&outcomes, n_samples);
    Ok((summary, outcomes))
}
