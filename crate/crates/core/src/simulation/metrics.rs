//! Per-run performance metrics and their Monte-Carlo aggregation.

use serde::{Deserialize, Serialize};

use super::{ManeuverDecision, RunHistory, SampleOutcome};
use crate::baseline::{ApsisKind, BaselineOrbit};
use crate::dynamics::Dynamics;
use crate::frames::{em_rotating_frame, Epoch};

const JULIAN_YEAR_S: f64 = 365.25 * 86_400.0;

/// Truth perilune paired with the nearest baseline perilune.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriluneDeviation {
    pub truth_epoch: Epoch,
    pub baseline_epoch: Epoch,
    /// Truth minus baseline.
    pub epoch_deviation_min: f64,
    /// Rotating-frame state differences.
    pub position_deviation_km: f64,
    pub velocity_deviation_ms: f64,
    /// False when the nearest baseline perilune is over half a period away.
    pub matched: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub stream: u64,
    pub n_revolutions: usize,
    pub n_executed: usize,
    pub n_skipped: usize,
    pub n_failed: usize,
    /// Σ‖commanded Δv‖ (cm/s).
    pub total_cost_cms: f64,
    /// Mean over executed maneuvers only.
    pub per_maneuver_mean_cms: f64,
    /// Mean over all maneuver opportunities, skipped ones included.
    pub per_revolution_mean_cms: f64,
    /// Total cost scaled to a Julian year of revolutions.
    pub yearly_cost_cms: f64,
    /// (days since run start, cumulative cost cm/s) after each opportunity.
    pub cumulative_cost: Vec<[f64; 2]>,
    pub cumulative_r2: f64,
    pub perilunes: Vec<PeriluneDeviation>,
    pub unmatched_perilunes: usize,
    /// Pre-maneuver rotating-frame estimation errors after burn-in
    /// (km ×3, cm/s ×3).
    pub pre_maneuver_errors: Vec<[f64; 6]>,
    /// Per-axis fraction of post-burn-in filter epochs whose inertial error
    /// lies inside the filter's 3σ.
    pub filter_consistency: [f64; 6],
    pub filter_epochs: usize,
    /// Largest number of executed maneuvers between consecutive truth
    /// apolunes.
    pub max_maneuvers_per_revolution: usize,
}

/// Coefficient of determination of a least-squares line through `pts`.
/// A constant series is fitted exactly and scores 1.
pub fn linear_fit_r2(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return 1.0;
    }
    let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p[0] - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p[0] - mx) * (p[1] - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p[1] - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    if sxx == 0.0 {
        return 0.0;
    }
    let slope = sxy / sxx;
    let sse: f64 = pts.iter().map(|p| (p[1] - my - slope * (p[0] - mx)).powi(2)).sum();
    1.0 - sse / syy
}

pub fn compute_metrics(h: &RunHistory, baseline: &BaselineOrbit, d: &Dynamics, burn_in: usize) -> RunMetrics {
    let period = baseline.mean_period();
    let s = d.scales;
    let count = |k: ManeuverDecision| h.revolutions.iter().filter(|r| r.decision == k).count();
    let n_executed = count(ManeuverDecision::Executed);

    let mut total = 0.0;
    let mut cumulative = Vec::with_capacity(h.revolutions.len());
    for r in &h.revolutions {
        total += r.commanded_norm_ms * 100.0;
        cumulative.push([(r.epoch - h.start_epoch) / 86_400.0, total]);
    }
    let n_revs = h.revolutions.len();
    let per = |n: usize| if n > 0 { total / n as f64 } else { 0.0 };

    let eph = d.ephemeris();
    let to_em = |t: Epoch, x: &crate::dynamics::StateVector| em_rotating_frame(t, eph).state_to_frame(x, s.tu);
    let mut perilunes = Vec::new();
    for p in h.passes.iter().filter(|p| p.kind == ApsisKind::Perilune) {
        let Some(&nearest) = baseline
            .perilune_epochs
            .iter()
            .min_by(|a, b| (**a - p.epoch).abs().total_cmp(&(**b - p.epoch).abs()))
        else {
            continue;
        };
        let Ok(reference) = baseline.reference_state(nearest) else {
            continue;
        };
        let (a, b) = (to_em(p.epoch, &p.state), to_em(nearest, &reference));
        perilunes.push(PeriluneDeviation {
            truth_epoch: p.epoch,
            baseline_epoch: nearest,
            epoch_deviation_min: (p.epoch - nearest) / 60.0,
            position_deviation_km: (a.r - b.r).norm() * s.lu,
            velocity_deviation_ms: (a.v - b.v).norm() * s.vu * 1e3,
            matched: (p.epoch - nearest).abs() <= 0.5 * period,
        });
    }

    let pre_maneuver_errors = h
        .revolutions
        .iter()
        .filter(|r| r.index >= burn_in)
        .map(|r| {
            let e = r.estimation_error_em;
            [e[0], e[1], e[2], e[3] * 100.0, e[4] * 100.0, e[5] * 100.0]
        })
        .collect();

    let late: Vec<_> = h.samples.iter().filter(|x| x.revolution >= burn_in).collect();
    let filter_consistency = std::array::from_fn(|i| {
        if late.is_empty() {
            return 1.0;
        }
        late.iter().filter(|x| x.error[i].abs() <= x.sigma3[i]).count() as f64 / late.len() as f64
    });

    let apolunes: Vec<Epoch> = h.passes.iter().filter(|p| p.kind == ApsisKind::Apolune).map(|p| p.epoch).collect();
    let mut bins = vec![0usize; apolunes.len() + 1];
    for r in h.revolutions.iter().filter(|r| r.decision == ManeuverDecision::Executed) {
        bins[apolunes.partition_point(|&a| a <= r.epoch)] += 1;
    }

    RunMetrics {
        stream: h.stream,
        n_revolutions: n_revs,
        n_executed,
        n_skipped: count(ManeuverDecision::Skipped),
        n_failed: count(ManeuverDecision::Failed),
        total_cost_cms: total,
        per_maneuver_mean_cms: per(n_executed),
        per_revolution_mean_cms: per(n_revs),
        yearly_cost_cms: if n_revs > 0 { total * JULIAN_YEAR_S / (n_revs as f64 * period) } else { 0.0 },
        cumulative_r2: linear_fit_r2(&cumulative),
        cumulative_cost: cumulative,
        unmatched_perilunes: perilunes.iter().filter(|p| !p.matched).count(),
        perilunes,
        pre_maneuver_errors,
        filter_consistency,
        filter_epochs: late.len(),
        max_maneuvers_per_revolution: bins.into_iter().max().unwrap_or(0),
    }
}

/// Summary statistics of a sample; `p95` interpolates linearly between
/// order statistics, `std` uses the n − 1 denominator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub p95: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Stats {
        let n = values.len();
        if n == 0 {
            return Stats {
                count: 0,
                mean: 0.0,
                std: 0.0,
                min: 0.0,
                max: 0.0,
                p95: 0.0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let pos = 0.95 * (n - 1) as f64;
        let (lo, frac) = (pos.floor() as usize, pos.fract());
        let p95 = if lo + 1 < n { sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]) } else { sorted[lo] };
        Stats {
            count: n,
            mean,
            std,
            min: sorted[0],
            max: sorted[n - 1],
            p95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleAbort {
    pub stream: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub n_samples: usize,
    pub n_completed: usize,
    pub aborts: Vec<SampleAbort>,
    pub total_revolutions: usize,
    pub total_executed: usize,
    /// Pooled cost per executed maneuver (cm/s).
    pub per_maneuver_mean_cms: f64,
    /// Pooled cost per maneuver opportunity (cm/s).
    pub per_revolution_mean_cms: f64,
    pub yearly_cost_cms: Stats,
    pub perilune_epoch_deviation_min: Stats,
    pub perilune_position_deviation_km: Stats,
    pub perilune_velocity_deviation_ms: Stats,
    pub unmatched_perilunes: usize,
    /// 3 × RMS of pooled pre-maneuver rotating-frame errors (km ×3, cm/s ×3).
    pub pre_maneuver_error_3sigma: [f64; 6],
    pub filter_consistency: [f64; 6],
    pub cumulative_r2: Stats,
    pub max_maneuvers_per_revolution: usize,
}

/// Aggregates outcomes in the order given.
pub fn summarize(outcomes: &[SampleOutcome], n_samples: usize) -> MonteCarloSummary {
    let runs: Vec<&RunMetrics> = outcomes.iter().filter_map(|o| o.as_ref().ok().map(|(_, m)| m)).collect();
    let aborts = outcomes.iter().filter_map(|o| o.as_ref().err().cloned()).collect();
    let total_revolutions: usize = runs.iter().map(|m| m.n_revolutions).sum();
    let total_executed: usize = runs.iter().map(|m| m.n_executed).sum();
    let total_cost: f64 = runs.iter().map(|m| m.total_cost_cms).sum();
    let ratio = |n: usize| if n > 0 { total_cost / n as f64 } else { 0.0 };

    let perilunes: Vec<&PeriluneDeviation> = runs.iter().flat_map(|m| m.perilunes.iter().filter(|p| p.matched)).collect();
    let field = |f: fn(&PeriluneDeviation) -> f64| Stats::of(&perilunes.iter().map(|p| f(p)).collect::<Vec<_>>());

    let errors: Vec<&[f64; 6]> = runs.iter().flat_map(|m| m.pre_maneuver_errors.iter()).collect();
    let pre_maneuver_error_3sigma = std::array::from_fn(|i| {
        if errors.is_empty() {
            return 0.0;
        }
        3.0 * (errors.iter().map(|e| e[i] * e[i]).sum::<f64>() / errors.len() as f64).sqrt()
    });
    let epochs: usize = runs.iter().map(|m| m.filter_epochs).sum();
    let filter_consistency = std::array::from_fn(|i| {
        if epochs == 0 {
            return 1.0;
        }
        runs.iter().map(|m| m.filter_consistency[i] * m.filter_epochs as f64).sum::<f64>() / epochs as f64
    });

    MonteCarloSummary {
        n_samples,
        n_completed: runs.len(),
        aborts,
        total_revolutions,
        total_executed,
        per_maneuver_mean_cms: ratio(total_executed),
        per_revolution_mean_cms: ratio(total_revolutions),
        yearly_cost_cms: Stats::of(&runs.iter().map(|m| m.yearly_cost_cms).collect::<Vec<_>>()),
        perilune_epoch_deviation_min: field(|p| p.epoch_deviation_min.abs()),
        perilune_position_deviation_km: field(|p| p.position_deviation_km),
        perilune_velocity_deviation_ms: field(|p| p.velocity_deviation_ms),
        unmatched_perilunes: runs.iter().map(|m| m.unmatched_perilunes).sum(),
        pre_maneuver_error_3sigma,
        filter_consistency,
        cumulative_r2: Stats::of(&runs.iter().map(|m| m.cumulative_r2).collect::<Vec<_>>()),
        max_maneuvers_per_revolution: runs.iter().map(|m| m.max_maneuvers_per_revolution).max().unwrap_or(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_of_exact_and_noisy_lines() {
        let line: Vec<[f64; 2]> = (0..10).map(|i| [i as f64, 3.0 * i as f64 + 1.0]).collect();
        assert!((linear_fit_r2(&line) - 1.0).abs() < 1e-14);
        let zig: Vec<[f64; 2]> = (0..10).map(|i| [i as f64, if i % 2 == 0 { 0.0 } else { 1.0 }]).collect();
        assert!(linear_fit_r2(&zig) < 0.1);
        assert_eq!(linear_fit_r2(&[[0.0, 2.0], [1.0, 2.0]]), 1.0);
    }

    #[test]
    fn stats_match_hand_computation() {
        let s = Stats::of(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!((s.mean, s.min, s.max), (3.0, 1.0, 5.0));
        assert!((s.std - 2.5f64.sqrt()).abs() < 1e-15);
        assert!((s.p95 - 4.8).abs() < 1e-12);
        let one = Stats::of(&[7.0]);
        assert_eq!((one.mean, one.std, one.p95), (7.0, 0.0, 7.0));
    }
}
