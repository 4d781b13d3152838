use std::sync::OnceLock;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nrhosk::baseline::{generate_baseline, ApsisKind, BaselineConfig, BaselineOrbit};
use nrhosk::dynamics::Dynamics;
use nrhosk::propagation::IntegratorConfig;
use nrhosk::simulation::*;

fn shared() -> &'static (Dynamics, BaselineOrbit) {
    static B: OnceLock<(Dynamics, BaselineOrbit)> = OnceLock::new();
    B.get_or_init(|| {
        let d = Dynamics::nominal();
        let cfg = BaselineConfig {
            revolutions: 30,
            ..Default::default()
        };
        let b = generate_baseline(&d, &cfg, &IntegratorConfig::default()).unwrap();
        (d, b)
    })
}

fn scenario(n_revolutions: usize, errors: ErrorModelConfig) -> ScenarioConfig {
    ScenarioConfig {
        n_revolutions,
        rng_seed: 7,
        errors,
        ..Default::default()
    }
}

fn three_sigma(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    3.0 * (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

const DRAWS: usize = 10_000;

#[test]
fn samplers_match_configured_three_sigma() {
    let err = ErrorModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    let abs = three_sigma((0..DRAWS).map(|_| corrupt_maneuver(&Vector3::zeros(), &err, &mut rng).norm() * 1e3));
    assert!((abs / 1.42 - 1.0).abs() < 0.1, "abs magnitude 3σ {abs} mm/s");

    let dir_only = ErrorModelConfig {
        dv_sigma_dir_deg: 1.0,
        ..ErrorModelConfig::zero()
    };
    let dv = Vector3::new(0.02, -0.01, 0.005);
    let angle = three_sigma((0..DRAWS).map(|_| {
        let e = corrupt_maneuver(&dv, &dir_only, &mut rng);
        assert!((e.norm() - dv.norm()).abs() < 1e-15);
        dv.angle(&e).to_degrees()
    }));
    assert!((angle - 1.0).abs() < 0.1, "pointing 3σ {angle} deg");

    let srp: Vec<(f64, f64)> = (0..DRAWS).map(|_| sample_srp_dispersion(&err, &mut rng)).collect();
    let am = three_sigma(srp.iter().map(|p| p.0));
    let cr = three_sigma(srp.iter().map(|p| p.1));
    assert!((am / 0.30 - 1.0).abs() < 0.1, "A/m 3σ {am}");
    assert!((cr / 0.15 - 1.0).abs() < 0.1, "Cr 3σ {cr}");

    let desat = three_sigma((0..DRAWS).map(|_| desaturation_impulse(&err, &mut rng).norm() * 100.0));
    assert!((desat - 1.0).abs() < 0.1, "desat 3σ {desat} cm/s");
}

#[test]
fn proportional_error_scales_with_commanded_magnitude() {
    let rel_only = ErrorModelConfig {
        dv_sigma_rel_pct: 1.5,
        ..ErrorModelConfig::zero()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dv = Vector3::new(0.0, 0.5, 0.0);
    let rel = three_sigma((0..DRAWS).map(|_| {
        let e = corrupt_maneuver(&dv, &rel_only, &mut rng);
        assert!(e.cross(&dv).norm() < 1e-15);
        e.norm() / dv.norm() - 1.0
    }));
    assert!((rel / 0.015 - 1.0).abs() < 0.1, "relative 3σ {rel}");
}

#[test]
fn zero_noise_run_stays_on_baseline_without_control() {
    let (d, b) = shared();
    let scn = scenario(20, ErrorModelConfig::zero());
    let h = run_closed_loop(d, b, &scn).unwrap();
    let m = compute_metrics(&h, b, d, scn.burn_in_revolutions);
    assert_eq!(h.revolutions.len(), 20);
    assert!(m.total_cost_cms <= 0.1, "zero-noise cost {} cm/s", m.total_cost_cms);
    let late = h.revolutions[1..].iter().filter(|r| r.decision == ManeuverDecision::Executed).count();
    assert!(late <= 1, "{late} maneuvers after the first revolution");
    assert_eq!(h.delta_am_rel, 0.0);
    assert!(h.desaturations.is_empty());
}

#[test]
fn three_desat_anomalies_fire_every_revolution() {
    let (d, b) = shared();
    let scn = scenario(4, ErrorModelConfig::with_desat_events(3).unwrap());
    let h = run_closed_loop(d, b, &scn).unwrap();
    let apolunes: Vec<_> = h.passes.iter().filter(|p| p.kind == ApsisKind::Apolune).map(|p| p.epoch).collect();
    assert!(apolunes.len() >= 4);
    // Complete revolutions between consecutive apolunes.
    for w in apolunes.windows(2) {
        let n = h.desaturations.iter().filter(|e| e.epoch > w[0] && e.epoch <= w[1]).count();
        assert_eq!(n, 3, "desaturations between apolunes {:?}", w);
    }
    let mut seen: Vec<f64> = h.desaturations.iter().take(3).map(|e| e.anomaly_deg).collect();
    seen.sort_by(f64::total_cmp);
    assert_eq!(seen, vec![0.0, 30.0, 330.0]);
}

#[test]
fn truth_uses_dispersed_srp_and_filter_uses_nominal() {
    let (d, b) = shared();
    let h = run_closed_loop(d, b, &scenario(1, ErrorModelConfig::default())).unwrap();
    assert_eq!(h.filter_spacecraft, d.spacecraft);
    assert_ne!(h.delta_am_rel, 0.0);
    let am = d.spacecraft.area_to_mass * (1.0 + h.delta_am_rel);
    let cr = d.spacecraft.cr * (1.0 + h.delta_cr_rel);
    assert_eq!(h.truth_spacecraft.area_to_mass, am);
    assert_eq!(h.truth_spacecraft.cr, cr);
}

#[test]
fn identical_seeds_give_identical_histories() {
    let (d, b) = shared();
    let scn = scenario(3, ErrorModelConfig::default());
    let a = serde_json::to_string(&run_closed_loop(d, b, &scn).unwrap()).unwrap();
    let c = serde_json::to_string(&run_closed_loop(d, b, &scn).unwrap()).unwrap();
    assert_eq!(a, c);
    let other = ScenarioConfig { rng_seed: 8, ..scn };
    assert_ne!(a, serde_json::to_string(&run_closed_loop(d, b, &other).unwrap()).unwrap());
}

#[test]
fn noisy_run_keeps_single_maneuver_and_monotone_cost() {
    let (d, b) = shared();
    let scn = scenario(8, ErrorModelConfig::default());
    let h = run_closed_loop(d, b, &scn).unwrap();
    let m = compute_metrics(&h, b, d, scn.burn_in_revolutions);
    assert!(m.max_maneuvers_per_revolution <= 1);
    assert!(m.cumulative_cost.windows(2).all(|w| w[1][1] >= w[0][1] && w[1][0] > w[0][0]));
    assert_eq!(m.n_executed + m.n_skipped + m.n_failed, 8);
    assert_eq!(m.unmatched_perilunes, 0);
    for p in &m.perilunes {
        assert!(p.position_deviation_km < 50.0 && p.velocity_deviation_ms < 10.0, "{p:?}");
    }
}

#[test]
fn single_sample_summary_equals_run_metrics() {
    let (d, b) = shared();
    let scn = scenario(3, ErrorModelConfig::default());
    let (s, outcomes) = run_monte_carlo(d, b, &scn, 1, 1).unwrap();
    let (h, m) = outcomes[0].as_ref().unwrap();
    assert_eq!(h, &run_closed_loop(d, b, &scn).unwrap());
    assert_eq!(s.n_completed, 1);
    assert_eq!(s.total_executed, m.n_executed);
    assert_eq!(s.per_maneuver_mean_cms, m.per_maneuver_mean_cms);
    assert_eq!(s.per_revolution_mean_cms, m.per_revolution_mean_cms);
    assert_eq!(s.yearly_cost_cms.mean, m.yearly_cost_cms);
    assert_eq!(s.yearly_cost_cms.p95, m.yearly_cost_cms);
    assert_eq!(s.filter_consistency, m.filter_consistency);
    assert_eq!(s.cumulative_r2.mean, m.cumulative_r2);
}

#[test]
fn worker_count_does_not_change_the_summary() {
    let (d, b) = shared();
    let scn = scenario(2, ErrorModelConfig::default());
    let (one, _) = run_monte_carlo(d, b, &scn, 3, 1).unwrap();
    let (two, _) = run_monte_carlo(d, b, &scn, 3, 2).unwrap();
    assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&two).unwrap());
    assert!(run_monte_carlo(d, b, &scn, 0, 1).is_err());
}

#[test]
fn baseline_perilunes_have_zero_deviation() {
    let (d, b) = shared();
    let mut h = run_closed_loop(d, b, &scenario(1, ErrorModelConfig::zero())).unwrap();
    h.passes = b
        .perilune_epochs
        .iter()
        .map(|&t| PassRecord {
            kind: ApsisKind::Perilune,
            epoch: t,
            state: b.reference_state(t).unwrap(),
        })
        .collect();
    let m = compute_metrics(&h, b, d, 0);
    assert_eq!(m.perilunes.len(), b.perilune_epochs.len());
    for p in &m.perilunes {
        assert!(p.matched);
        assert_eq!(p.epoch_deviation_min, 0.0);
        assert_eq!(p.position_deviation_km, 0.0);
        assert_eq!(p.velocity_deviation_ms, 0.0);
    }
}

#[test]
fn artifacts_have_consistent_tables() {
    let (d, b) = shared();
    let scn = scenario(3, ErrorModelConfig::default());
    let h = run_closed_loop(d, b, &scn).unwrap();
    let m = compute_metrics(&h, b, d, scn.burn_in_revolutions);
    let dir = tempfile::tempdir().unwrap();
    write_run_artifacts(dir.path(), &h, &m).unwrap();
    write_figure_csvs(dir.path(), &h, &m).unwrap();

    let table = |name: &str| {
        let mut r = csv::Reader::from_path(dir.path().join(name)).unwrap();
        let width = r.headers().unwrap().len();
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert!(rows.iter().all(|x| x.len() == width), "{name} has ragged rows");
        rows
    };
    assert_eq!(table("maneuvers.csv").len(), 3);
    assert_eq!(table("passes.csv").len(), h.passes.len());
    assert_eq!(table("filter.csv").len(), h.samples.len());
    assert_eq!(table("desaturations.csv").len(), h.desaturations.len());
    for f in FIGURE_FILES {
        table(f);
    }
    let peri = table(FIGURE_FILES[3]);
    assert_eq!(peri.len(), h.passes.iter().filter(|p| p.kind == ApsisKind::Perilune).count());
    let cost = table(FIGURE_FILES[1]);
    let last: f64 = cost.last().unwrap()[2].parse().unwrap();
    assert!((last - m.total_cost_cms).abs() <= 1e-9);

    let back: RunHistory = serde_json::from_slice(&std::fs::read(dir.path().join("history.json")).unwrap()).unwrap();
    assert_eq!(back, h);
}
