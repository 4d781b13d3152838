use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use nrhosk::baseline::{generate_baseline, write_atomic, BaselineOrbit};
use nrhosk::dynamics::{ftle, Dynamics};
use nrhosk::propagation::propagate_with_stm;
use nrhosk::simulation::{
    compute_metrics, run_closed_loop, run_monte_carlo, write_figure_csvs, write_run_artifacts, MonteCarloSummary,
    RunHistory, RunMetrics, FIGURE_FILES, RUN_FILES,
};

use crate::config::CliConfig;

const MANIFEST: &str = "manifest.json";

/// Points along the first revolution at which FTLE is sampled.
const FTLE_SAMPLES: usize = 24;

#[derive(Serialize)]
struct FileEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    /// The resolved configuration minus `output_dir`, so that identical
    /// runs written to different places have identical manifests.
    config: serde_json::Value,
    files: Vec<FileEntry>,
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn hash_entry(root: &Path, path: &Path) -> Result<FileEntry> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read back {}", path.display()))?;
    let rel = path.strip_prefix(root).unwrap_or(path);
    Ok(FileEntry {
        path: rel.to_string_lossy().replace('\\', "/"),
        bytes: bytes.len() as u64,
        sha256: format!("{:x}", Sha256::digest(&bytes)),
    })
}

/// Written last: its presence means every listed artifact is complete.
fn write_manifest(dir: &Path, command: &str, cfg: &CliConfig, files: &[PathBuf]) -> Result<()> {
    let files = files.iter().map(|f| hash_entry(dir, f)).collect::<Result<Vec<_>>>()?;
    let mut config = serde_json::to_value(cfg)?;
    if let Some(map) = config.as_object_mut() {
        map.remove("output_dir");
    }
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        files,
    };
    write_atomic(&dir.join(MANIFEST), &json_bytes(&m)?)?;
    Ok(())
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

pub fn generate_baseline_cmd(cfg: &CliConfig, output: &Path) -> Result<()> {
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        if !parent.is_dir() {
            bail!("output directory {} does not exist", parent.display());
        }
    }
    let d = cfg.dynamics()?;
    log::info!("generating a {}-revolution baseline", cfg.baseline.revolutions);
    let b = generate_baseline(&d, &cfg.baseline, &cfg.baseline_integrator)?;
    b.save(output).with_context(|| format!("cannot write baseline {}", output.display()))?;

    let period_days = b.mean_period() / 86_400.0;
    let rp = b
        .perilune_epochs
        .iter()
        .map(|&t| b.reference_state(t).map(|x| x.r.norm() * d.scales.lu))
        .collect::<nrhosk::Result<Vec<_>>>()?;
    let rp_mean = rp.iter().sum::<f64>() / rp.len().max(1) as f64;
    let (lo, hi) = ftle_range(&d, &b, cfg)?;
    println!("baseline written to {}", output.display());
    println!("  revolutions        {}", b.apolune_epochs.len());
    println!("  mean period        {period_days:.4} days");
    println!("  perilune radius    {rp_mean:.1} km");
    println!(
        "  joint defects      {:.2e} km, {:.2e} km/s",
        b.metadata.max_position_defect_km, b.metadata.max_velocity_defect_kms
    );
    println!("  one-period FTLE    min {:.4} (at {:.0} deg) / max {:.4} (at {:.0} deg) per day", lo.0, lo.1, hi.0, hi.1);
    Ok(())
}

/// Smallest and largest one-period FTLE (1/day) over the first revolution,
/// each with the osculating true anomaly (deg) where it occurs.
fn ftle_range(d: &Dynamics, b: &BaselineOrbit, cfg: &CliConfig) -> Result<((f64, f64), (f64, f64))> {
    let period = b.mean_period();
    let t0 = b.start();
    let mut lo = (f64::INFINITY, 0.0);
    let mut hi = (f64::NEG_INFINITY, 0.0);
    for k in 0..FTLE_SAMPLES {
        let t = t0 + period * k as f64 / FTLE_SAMPLES as f64;
        let x = b.reference_state(t)?;
        let (_, phi) = propagate_with_stm(d, &x, t, t + period, &cfg.baseline_integrator)?;
        let value = ftle(&phi.0, period / 86_400.0)?;
        let anomaly = nrhosk::dynamics::osculating_true_anomaly(&x, d.gravity.mu_moon)?.to_degrees();
        if value < lo.0 {
            lo = (value, anomaly);
        }
        if value > hi.0 {
            hi = (value, anomaly);
        }
    }
    Ok((lo, hi))
}

fn print_run(m: &RunMetrics) {
    let matched: Vec<_> = m.perilunes.iter().filter(|p| p.matched).collect();
    let max = |f: fn(&nrhosk::simulation::PeriluneDeviation) -> f64| matched.iter().map(|p| f(p)).fold(0.0, f64::max);
    println!("revolutions          {} ({} executed, {} skipped, {} failed)", m.n_revolutions, m.n_executed, m.n_skipped, m.n_failed);
    println!("cumulative dv        {:.3} cm/s", m.total_cost_cms);
    println!("per maneuver         {:.3} cm/s (executed only), {:.3} cm/s (all revolutions)", m.per_maneuver_mean_cms, m.per_revolution_mean_cms);
    println!("yearly equivalent    {:.2} cm/s", m.yearly_cost_cms);
    println!("cumulative fit R^2   {:.4}", m.cumulative_r2);
    println!(
        "perilune deviation   max {:.2} km, {:.3} m/s, {:.2} min over {} passes ({} unmatched)",
        max(|p| p.position_deviation_km),
        max(|p| p.velocity_deviation_ms),
        max(|p| p.epoch_deviation_min.abs()),
        matched.len(),
        m.unmatched_perilunes
    );
}

pub fn run_cmd(cfg: &CliConfig, out: &Path) -> Result<()> {
    let d = cfg.dynamics()?;
    let b = cfg.load_baseline(&cfg.baseline_path)?;
    prepare_dir(out)?;
    let h = run_closed_loop(&d, &b, &cfg.scenario)?;
    let m = compute_metrics(&h, &b, &d, cfg.scenario.burn_in_revolutions);
    write_run_artifacts(out, &h, &m)?;
    let files: Vec<PathBuf> = RUN_FILES.iter().map(|f| out.join(f)).collect();
    write_manifest(out, "run", cfg, &files)?;
    println!("run written to {}", out.display());
    print_run(&m);
    Ok(())
}

fn print_summary(s: &MonteCarloSummary) {
    let e = s.pre_maneuver_error_3sigma;
    println!("samples              {} completed, {} aborted", s.n_completed, s.aborts.len());
    println!("pre-maneuver estimation error 3-sigma (Earth-Moon rotating frame)");
    println!("  position km        x {:.3}  y {:.3}  z {:.3}", e[0], e[1], e[2]);
    println!("  velocity cm/s      x {:.3}  y {:.3}  z {:.3}", e[3], e[4], e[5]);
    println!("cost");
    println!("  per maneuver mean  {:.2} cm/s (executed only), {:.2} cm/s (all revolutions)", s.per_maneuver_mean_cms, s.per_revolution_mean_cms);
    let y = s.yearly_cost_cms;
    println!("  yearly mean        {:.2} cm/s", y.mean);
    println!("  yearly std         {:.2} cm/s", y.std);
    println!("  yearly 95th pct    {:.2} cm/s", y.p95);
    println!("perilune deviation");
    println!("  position km        mean {:.2}  max {:.2}", s.perilune_position_deviation_km.mean, s.perilune_position_deviation_km.max);
    println!("  velocity m/s       mean {:.3}  max {:.3}", s.perilune_velocity_deviation_ms.mean, s.perilune_velocity_deviation_ms.max);
    let ep = s.perilune_epoch_deviation_min;
    println!("  epoch min          mean {:.2}  range [{:.2}, {:.2}]", ep.mean, ep.min, ep.max);
    println!("filter 3-sigma consistency {:?}", s.filter_consistency.map(|c| (c * 1000.0).round() / 1000.0));
    println!("max maneuvers per revolution {}", s.max_maneuvers_per_revolution);
    for a in &s.aborts {
        println!("aborted sample {}: {}", a.stream, a.reason);
    }
}

pub fn monte_carlo_cmd(cfg: &CliConfig, out: &Path, jobs: usize) -> Result<()> {
    let d = cfg.dynamics()?;
    let b = cfg.load_baseline(&cfg.baseline_path)?;
    prepare_dir(out)?;
    let (summary, outcomes) = run_monte_carlo(&d, &b, &cfg.scenario, cfg.samples, jobs)?;
    let mut files = Vec::new();
    for (h, m) in outcomes.iter().flatten() {
        let dir = out.join(format!("sample_{:04}", h.stream));
        prepare_dir(&dir)?;
        write_run_artifacts(&dir, h, m)?;
        files.extend(RUN_FILES.iter().map(|f| dir.join(f)));
    }
    let summary_path = out.join("summary.json");
    write_atomic(&summary_path, &json_bytes(&summary)?)?;
    files.push(summary_path);
    write_manifest(out, "monte-carlo", cfg, &files)?;
    println!("monte carlo written to {}", out.display());
    print_summary(&summary);
    Ok(())
}

pub fn analyze_cmd(run_dir: &Path, out: &Path, cfg: &CliConfig) -> Result<()> {
    let read = |name: &str| -> Result<Vec<u8>> {
        let p = run_dir.join(name);
        std::fs::read(&p).with_context(|| format!("{} is missing; point analyze at a directory written by `run`", p.display()))
    };
    let h: RunHistory = serde_json::from_slice(&read("history.json")?).context("history.json is malformed")?;
    let m: RunMetrics = serde_json::from_slice(&read("metrics.json")?).context("metrics.json is malformed")?;
    prepare_dir(out)?;
    write_figure_csvs(out, &h, &m)?;
    let files: Vec<PathBuf> = FIGURE_FILES.iter().map(|f| out.join(f)).collect();
    write_manifest(out, "analyze", cfg, &files)?;
    println!("figure tables written to {}", out.display());
    for f in FIGURE_FILES {
        println!("  {f}");
    }
    Ok(())
}
