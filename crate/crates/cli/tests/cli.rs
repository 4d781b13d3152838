use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_nrhosk");

/// One baseline shared by every test, long enough for 20-revolution runs.
fn workspace() -> &'static (TempDir, PathBuf) {
    static W: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    W.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), "base.json", r#"{"baseline": {"revolutions": 30}}"#);
        let baseline = dir.path().join("baseline.nrho");
        let out = nrhosk(dir.path(), &["--config", s(&cfg), "generate-baseline", "--output", s(&baseline)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (dir, baseline)
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, json).unwrap();
    p
}

fn nrhosk(cwd: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(cwd).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

/// Config for a short noisy run against the shared baseline.
fn short_config(dir: &Path, revs: usize) -> PathBuf {
    let (_, baseline) = workspace();
    let doc = format!(r#"{{"baseline_path": {:?}, "scenario": {{"n_revolutions": {revs}}}, "samples": 2}}"#, s(baseline));
    write_config(dir, "short.json", &doc)
}

#[test]
fn generate_baseline_reports_period_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"baseline": {"revolutions": 12}}"#);
    let args = |out: &str| vec!["--config".to_string(), s(&cfg).to_string(), "generate-baseline".into(), "--output".into(), out.into()];
    let a = Command::new(BIN).current_dir(dir.path()).args(args("a.nrho")).output().unwrap();
    assert!(a.status.success());
    let text = stdout(&a);
    let period: f64 = text
        .lines()
        .find(|l| l.contains("mean period"))
        .and_then(|l| l.split_whitespace().nth(2))
        .unwrap()
        .parse()
        .unwrap();
    assert!((period / 6.55 - 1.0).abs() < 0.02, "period {period} days");
    assert!(text.contains("FTLE") && text.contains("perilune radius"));

    let b = Command::new(BIN).current_dir(dir.path()).args(args("b.nrho")).output().unwrap();
    assert!(b.status.success());
    assert_eq!(std::fs::read(dir.path().join("a.nrho")).unwrap(), std::fs::read(dir.path().join("b.nrho")).unwrap());
}

#[test]
fn invalid_output_directory_fails_without_partial_files() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("missing").join("b.nrho");
    let out = nrhosk(dir.path(), &["generate-baseline", "--revolutions", "10", "--output", s(&target)]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    assert!(!dir.path().join("missing").exists());
}

#[test]
fn missing_baseline_gives_an_actionable_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = nrhosk(dir.path(), &["run", "--baseline", "nowhere.nrho"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nowhere.nrho") && err.contains("generate-baseline"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn config_errors_are_reported_before_running() {
    let dir = tempfile::tempdir().unwrap();
    for doc in [r#"{"scenario": {"n_revs": 3}}"#, r#"{"scenario": {"n_revolutions": 0}}"#, "not json"] {
        let cfg = write_config(dir.path(), "bad.json", doc);
        let out = nrhosk(dir.path(), &["--config", s(&cfg), "run"]);
        assert!(!out.status.success(), "{doc}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    }
}

#[test]
fn repeated_runs_produce_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 3);
    for name in ["a", "b"] {
        let out = nrhosk(dir.path(), &["--config", s(&cfg), "--seed", "42", "--out", name, "run"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).contains("cumulative dv"));
    }
    let manifest = read_json(&dir.path().join("a/manifest.json"));
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), 6);
    for f in files {
        let name = f["path"].as_str().unwrap();
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        assert_eq!(a, std::fs::read(dir.path().join("b").join(name)).unwrap(), "{name}");
    }
    assert_eq!(std::fs::read(dir.path().join("a/manifest.json")).unwrap(), std::fs::read(dir.path().join("b/manifest.json")).unwrap());
    assert_eq!(read_json(&dir.path().join("a/history.json"))["rng_seed"], 42);
}

#[test]
fn zero_noise_run_spends_almost_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let (_, baseline) = workspace();
    let zero = r#"{"srp_am_sigma_pct": 0, "srp_cr_sigma_pct": 0, "desat_sigma_cms": 0, "desat_anomalies_deg": [],
        "dv_sigma_rel_pct": 0, "dv_sigma_abs_mms": 0, "dv_sigma_dir_deg": 0, "init_pos_sigma_km": 0,
        "init_vel_sigma_mms": 0, "range_sigma_m": 0, "range_rate_sigma_mms": 0}"#;
    let doc = format!(r#"{{"baseline_path": {:?}, "scenario": {{"n_revolutions": 20, "errors": {zero}}}}}"#, s(baseline));
    let cfg = write_config(dir.path(), "zero.json", &doc);
    let out = nrhosk(dir.path(), &["--config", s(&cfg), "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = read_json(&dir.path().join("out/metrics.json"));
    let total = m["total_cost_cms"].as_f64().unwrap();
    assert!(total <= 0.1, "zero-noise cost {total} cm/s");
}

#[test]
fn monte_carlo_is_independent_of_job_count_and_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 2);
    for (jobs, name) in [("1", "mc1"), ("2", "mc2")] {
        let out = nrhosk(dir.path(), &["--config", s(&cfg), "--jobs", jobs, "--out", name, "monte-carlo"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).contains("yearly mean"));
    }
    for f in ["summary.json", "manifest.json", "sample_0001/history.json"] {
        assert_eq!(std::fs::read(dir.path().join("mc1").join(f)).unwrap(), std::fs::read(dir.path().join("mc2").join(f)).unwrap(), "{f}");
    }

    let out = nrhosk(dir.path(), &["--config", s(&cfg), "--out", "single", "monte-carlo", "--samples", "1"]);
    assert!(out.status.success());
    let out = nrhosk(dir.path(), &["--config", s(&cfg), "--out", "run", "run"]);
    assert!(out.status.success());
    let run = read_json(&dir.path().join("run/metrics.json"));
    let summary = read_json(&dir.path().join("single/summary.json"));
    assert_eq!(summary["n_completed"], 1);
    assert_eq!(summary["per_maneuver_mean_cms"], run["per_maneuver_mean_cms"]);
    assert_eq!(summary["yearly_cost_cms"]["mean"], run["yearly_cost_cms"]);
    assert_eq!(std::fs::read(dir.path().join("single/sample_0000/metrics.json")).unwrap(), std::fs::read(dir.path().join("run/metrics.json")).unwrap());
}

#[test]
fn analyze_writes_consistent_figure_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 3);
    assert!(nrhosk(dir.path(), &["--config", s(&cfg), "--out", "r", "run"]).status.success());
    let out = nrhosk(dir.path(), &["analyze", "r"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let fig = dir.path().join("r/figures");
    let table = |name: &str| -> (Vec<String>, Vec<Vec<String>>) {
        let text = std::fs::read_to_string(fig.join(name)).unwrap();
        let mut lines = text.lines().map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>());
        let header = lines.next().unwrap();
        let rows: Vec<_> = lines.collect();
        assert!(rows.iter().all(|r| r.len() == header.len()), "{name}");
        (header, rows)
    };
    let names = [
        "fig_estimation_error.csv",
        "fig_cumulative_cost.csv",
        "fig_state_deviation.csv",
        "fig_perilune_epoch_deviation.csv",
        "fig_perilune_state_deviation.csv",
    ];
    for n in names {
        let (header, _) = table(n);
        assert!(header.iter().all(|h| !h.is_empty()));
    }
    let history = read_json(&dir.path().join("r/history.json"));
    let perilunes = history["passes"].as_array().unwrap().iter().filter(|p| p["kind"] == "perilune").count();
    assert_eq!(table(names[3]).1.len(), perilunes);
    assert_eq!(table(names[4]).1.len(), perilunes);

    let (header, rows) = table(names[1]);
    assert_eq!(header.last().unwrap(), "cumulative_cost_cms");
    let last: f64 = rows.last().unwrap()[2].parse().unwrap();
    let total = read_json(&dir.path().join("r/metrics.json"))["total_cost_cms"].as_f64().unwrap();
    assert!((last - total).abs() <= 1e-9);

    assert_eq!(read_json(&fig.join("manifest.json"))["files"].as_array().unwrap().len(), 5);
    let missing = nrhosk(dir.path(), &["analyze", "nothing-here"]);
    assert!(!missing.status.success());
}
