//! Run artifacts on disk: JSON documents and CSV tables.
//!
//! Column units are part of the header names. Every file is written
//! atomically.

use std::path::Path;

use serde::Serialize;

use super::{ManeuverDecision, RunHistory, RunMetrics, SampleKind};
use crate::baseline::{write_atomic, ApsisKind};
use crate::error::{Error, Result};

/// Files written by [`write_run_artifacts`].
pub const RUN_FILES: [&str; 6] = [
    "history.json",
    "metrics.json",
    "maneuvers.csv",
    "passes.csv",
    "filter.csv",
    "desaturations.csv",
];

/// Plot-ready tables written by [`write_figure_csvs`].
pub const FIGURE_FILES: [&str; 5] = [
    "fig_estimation_error.csv",
    "fig_cumulative_cost.csv",
    "fig_state_deviation.csv",
    "fig_perilune_epoch_deviation.csv",
    "fig_perilune_state_deviation.csv",
];

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>, header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let fail = |e: csv::Error| Error::invalid(format!("csv encoding failed: {e}"));
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.serialize(r).map_err(fail)?;
    }
    w.into_inner().map_err(|e| Error::invalid(format!("csv flush failed: {e}")))
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    write_atomic(&dir.join(name), &csv_bytes(rows, header)?)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn decision(d: ManeuverDecision) -> &'static str {
    match d {
        ManeuverDecision::Skipped => "skipped",
        ManeuverDecision::Executed => "executed",
        ManeuverDecision::Failed => "failed",
    }
}

fn kind(k: SampleKind) -> &'static str {
    match k {
        SampleKind::PreManeuver => "pre_maneuver",
        SampleKind::Update => "update",
    }
}

/// history.json, metrics.json, and the maneuver, pass, filter, and
/// desaturation tables.
pub fn write_run_artifacts(dir: &Path, h: &RunHistory, m: &RunMetrics) -> Result<()> {
    write_json(&dir.join("history.json"), h)?;
    write_json(&dir.join("metrics.json"), m)?;
    write_csv(
        dir,
        "maneuvers.csv",
        &[
            "revolution",
            "epoch_s",
            "decision",
            "drift_position_error_km",
            "drift_velocity_error_ms",
            "commanded_x_ms",
            "commanded_y_ms",
            "commanded_z_ms",
            "executed_x_ms",
            "executed_y_ms",
            "executed_z_ms",
            "commanded_norm_ms",
            "executed_norm_ms",
            "planner_iterations",
            "converged",
        ],
        h.revolutions.iter().map(|r| {
            let (it, conv) = r.plan.as_ref().map_or((0, false), |p| (p.iterations_used, p.converged));
            let (c, e) = (r.commanded_dv_ms, r.executed_dv_ms);
            (
                r.index,
                r.epoch.seconds(),
                decision(r.decision),
                r.drift_position_error_km,
                r.drift_velocity_error_ms,
                (c[0], c[1], c[2]),
                (e[0], e[1], e[2]),
                r.commanded_norm_ms,
                r.executed_norm_ms,
                it,
                conv,
            )
        }),
    )?;
    write_csv(
        dir,
        "passes.csv",
        &["kind", "epoch_s", "x_lu", "y_lu", "z_lu", "vx_vu", "vy_vu", "vz_vu"],
        h.passes.iter().map(|p| {
            let x = p.state.to_array();
            let k = match p.kind {
                ApsisKind::Apolune => "apolune",
                ApsisKind::Perilune => "perilune",
            };
            (k, p.epoch.seconds(), x)
        }),
    )?;
    write_csv(
        dir,
        "filter.csv",
        &[
            "epoch_s", "revolution", "kind", "err_x_km", "err_y_km", "err_z_km", "err_vx_ms", "err_vy_ms", "err_vz_ms",
            "sig3_x_km", "sig3_y_km", "sig3_z_km", "sig3_vx_ms", "sig3_vy_ms", "sig3_vz_ms",
        ],
        h.samples.iter().map(|s| (s.epoch.seconds(), s.revolution, kind(s.kind), s.error, s.sigma3)),
    )?;
    write_csv(
        dir,
        "desaturations.csv",
        &["epoch_s", "anomaly_deg", "dv_x_ms", "dv_y_ms", "dv_z_ms"],
        h.desaturations.iter().map(|d| (d.epoch.seconds(), d.anomaly_deg, d.dv_ms)),
    )
}

/// The five plot tables: estimation error with filter 3σ, cumulative cost,
/// rotating-frame deviation from the baseline, and perilune epoch and state
/// deviations.
pub fn write_figure_csvs(dir: &Path, h: &RunHistory, m: &RunMetrics) -> Result<()> {
    let days = |t: crate::frames::Epoch| (t - h.start_epoch) / 86_400.0;
    write_csv(
        dir,
        FIGURE_FILES[0],
        &[
            "days", "kind", "err_x_km", "err_y_km", "err_z_km", "err_vx_ms", "err_vy_ms", "err_vz_ms", "sig3_x_km",
            "sig3_y_km", "sig3_z_km", "sig3_vx_ms", "sig3_vy_ms", "sig3_vz_ms",
        ],
        h.samples.iter().map(|s| (days(s.epoch), kind(s.kind), s.error, s.sigma3)),
    )?;
    write_csv(
        dir,
        FIGURE_FILES[1],
        &["revolution", "days", "cumulative_cost_cms"],
        m.cumulative_cost.iter().enumerate().map(|(i, c)| (i, c[0], c[1])),
    )?;
    write_csv(
        dir,
        FIGURE_FILES[2],
        &["days", "dx_km", "dy_km", "dz_km", "dvx_ms", "dvy_ms", "dvz_ms"],
        h.samples.iter().map(|s| (days(s.epoch), s.baseline_deviation_em)),
    )?;
    write_csv(
        dir,
        FIGURE_FILES[3],
        &["pass", "days", "epoch_deviation_min", "matched"],
        m.perilunes.iter().enumerate().map(|(i, p)| (i, days(p.truth_epoch), p.epoch_deviation_min, p.matched)),
    )?;
    write_csv(
        dir,
        FIGURE_FILES[4],
        &["pass", "days", "position_deviation_km", "velocity_deviation_ms", "matched"],
        m.perilunes
            .iter()
            .enumerate()
            .map(|(i, p)| (i, days(p.truth_epoch), p.position_deviation_km, p.velocity_deviation_ms, p.matched)),
    )
}
