use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;

use nrhosk::baseline::*;
use nrhosk::dynamics::{ftle, osculating_true_anomaly, Dynamics};
use nrhosk::frames::{em_rotating_frame, Epoch};
use nrhosk::propagation::{propagate, propagate_with_stm, IntegratorConfig};

const REVS: usize = 12;

fn config() -> BaselineConfig {
    BaselineConfig {
        revolutions: REVS,
        ..Default::default()
    }
}

fn shared() -> &'static (Dynamics, BaselineOrbit) {
    static B: OnceLock<(Dynamics, BaselineOrbit)> = OnceLock::new();
    B.get_or_init(|| {
        let d = Dynamics::nominal();
        let b = generate_baseline(&d, &config(), &IntegratorConfig::default()).unwrap();
        (d, b)
    })
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

#[test]
fn seed_is_a_symmetric_periodic_orbit() {
    let d = Dynamics::nominal();
    let seed = generate_seed(&d, &config()).unwrap();
    let x = seed.initial_state;
    assert_eq!((x[1], x[3], x[5]), (0.0, 0.0, 0.0));
    let (half, _) = cr3bp_flow(seed.mass_ratio, &x, 0.5 * seed.period).unwrap();
    for i in [1, 3, 5] {
        assert!(half[i].abs() < 1e-10, "component {i} at the half period: {}", half[i]);
    }
    let (full, _) = cr3bp_flow(seed.mass_ratio, &x, seed.period).unwrap();
    for i in 0..6 {
        assert!((full[i] - x[i]).abs() < 1e-10);
    }
    // Southern family: the apolune lies below the Earth-Moon plane.
    assert!(x[2] < 0.0);
}

#[test]
fn seed_period_matches_nine_to_two_resonance() {
    let d = Dynamics::nominal();
    let seed = generate_seed(&d, &config()).unwrap();
    let days = seed.period / d.ephemeris().earth.mean_motion() / 86_400.0;
    assert!((days / 6.55 - 1.0).abs() < 0.02, "period {days} d");
}

#[test]
fn nrho_by_perilune_radius_hits_target() {
    let d = Dynamics::nominal();
    let mu = mass_ratio(&d);
    let target = 3500.0 / 384_400.0;
    let orbit = generate_cr3bp_nrho(mu, target).unwrap();
    assert!((perilune_radius(&orbit).unwrap() - target).abs() < 1e-6);
}

#[test]
fn joints_are_continuous_after_refinement() {
    let (d, b) = shared();
    assert!(b.metadata.max_position_defect_km <= 1e-3);
    assert!(b.metadata.max_velocity_defect_kms <= 1e-6);
    // Re-propagate between stored half-revolution nodes independently.
    let cfg = IntegratorConfig::default();
    let per_half = b.metadata.knots_per_revolution / 2;
    let nodes: Vec<_> = b.knots.iter().step_by(per_half).collect();
    for w in nodes.windows(2) {
        let x = propagate(d, &w[0].state, w[0].epoch, w[1].epoch, &cfg).unwrap();
        assert!((x.r - w[1].state.r).norm() * d.scales.lu < 1e-3);
        assert!((x.v - w[1].state.v).norm() * d.scales.vu < 1e-6);
    }
}

#[test]
fn one_apolune_per_revolution_at_true_anomaly_pi() {
    let (_, b) = shared();
    assert_eq!(b.apolune_epochs.len(), REVS);
    for &e in &b.apolune_epochs {
        let th = osculating_true_anomaly(&b.reference_state(e).unwrap(), 1.0).unwrap();
        assert!(wrap(th - PI).abs() < 1e-6);
    }
    for &e in &b.perilune_epochs {
        let th = osculating_true_anomaly(&b.reference_state(e).unwrap(), 1.0).unwrap();
        assert!(wrap(th).abs() < 1e-6);
    }
}

#[test]
fn apsis_spacing_and_perilune_radius_are_regular() {
    let (d, b) = shared();
    let period = b.mean_period();
    assert!((period / 86_400.0 / 6.55 - 1.0).abs() < 0.02);
    for list in [&b.apolune_epochs, &b.perilune_epochs] {
        for w in list.windows(2) {
            assert!(((w[1] - w[0]) / period - 1.0).abs() < 0.1);
        }
    }
    let rp: Vec<f64> = b
        .perilune_epochs
        .iter()
        .map(|&e| b.reference_state(e).unwrap().r.norm() * d.scales.lu)
        .collect();
    let (lo, hi) = rp.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &r| (l.min(r), h.max(r)));
    assert!((hi - lo) / lo < 0.2, "perilune radius {lo}..{hi} km");
}

#[test]
fn interpolation_is_exact_at_knots_and_tight_between() {
    let (d, b) = shared();
    for k in b.knots.iter().step_by(37) {
        assert_eq!(b.reference_state(k.epoch).unwrap(), k.state);
    }
    let cfg = IntegratorConfig::default();
    let mut worst = 0.0f64;
    for w in b.knots.windows(2).step_by(5) {
        let mid = w[0].epoch + 0.5 * (w[1].epoch - w[0].epoch);
        let truth = propagate(d, &w[0].state, w[0].epoch, mid, &cfg).unwrap();
        worst = worst.max((truth.r - b.reference_state(mid).unwrap().r).norm() * d.scales.lu * 1e3);
    }
    assert!(worst <= 10.0, "worst interpolation error {worst} m");
    assert!(b.reference_state(b.start() - 1.0).is_err());
    assert!(b.reference_state(b.end() + 1.0).is_err());
}

#[test]
fn apsis_queries_respect_windows() {
    let (_, b) = shared();
    assert_eq!(b.apsis_epochs(ApsisKind::Apolune, b.start(), b.end()).len(), REVS);
    let a0 = b.apolune_epochs[3];
    let short = b.apsis_epochs(ApsisKind::Apolune, a0 - 1000.0, a0 + 0.5 * b.mean_period());
    assert_eq!(short, vec![a0]);
    assert!(b.apsis_epochs(ApsisKind::Perilune, b.end(), b.start()).is_empty());
    assert_eq!(b.next_apolune_after(a0), Some(b.apolune_epochs[4]));
}

#[test]
fn apolune_states_are_nearly_invariant_in_rotating_frame() {
    let (d, b) = shared();
    let eph = d.ephemeris();
    let states: Vec<_> = b
        .apolune_epochs
        .iter()
        .map(|&e| em_rotating_frame(e, eph).state_to_frame(&b.reference_state(e).unwrap(), d.scales.tu))
        .collect();
    let amplitude = states.iter().map(|x| x.r.norm()).fold(0.0, f64::max);
    for w in states.windows(2) {
        assert!((w[1].r - w[0].r).norm() / amplitude < 0.05);
    }
}

#[test]
fn perilune_is_more_sensitive_than_apolune() {
    let (d, b) = shared();
    let cfg = IntegratorConfig::default();
    let period = b.mean_period();
    let exponent = |e: Epoch| {
        let x = b.reference_state(e).unwrap();
        let (_, phi) = propagate_with_stm(d, &x, e, e + period, &cfg).unwrap();
        ftle(&phi.0, period / d.scales.tu).unwrap()
    };
    let peri = exponent(b.perilune_epochs[1]);
    let apo = exponent(b.apolune_epochs[1]);
    assert!(peri > apo, "perilune {peri} vs apolune {apo}");
}

#[test]
fn file_round_trip_is_exact() {
    let (_, b) = shared();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nrho.txt");
    b.save(&path).unwrap();
    let back = BaselineOrbit::load(&path).unwrap();
    assert_eq!(&back, b);
    assert_eq!(back.to_text(), b.to_text());
}

#[test]
fn malformed_files_are_rejected() {
    let (_, b) = shared();
    let text = b.to_text();
    assert!(BaselineOrbit::parse(&text.replacen("nrhosk-baseline 1", "nrhosk-baseline 9", 1)).is_err());
    assert!(BaselineOrbit::parse(&text.replacen("cr = ", "colour = ", 1)).is_err());
    assert!(BaselineOrbit::parse(&format!("{text}extra\n")).is_err());
    let truncated: String = text.lines().take(40).map(|l| format!("{l}\n")).collect();
    assert!(BaselineOrbit::parse(&truncated).is_err());
}

#[test]
fn generation_is_deterministic() {
    let (d, b) = shared();
    let again = generate_baseline(d, &config(), &IntegratorConfig::default()).unwrap();
    assert_eq!(again.to_text(), b.to_text());
}

#[test]
fn short_baselines_are_refused() {
    let d = Dynamics::nominal();
    let cfg = BaselineConfig {
        revolutions: 5,
        ..Default::default()
    };
    assert!(generate_baseline(&d, &cfg, &IntegratorConfig::default()).is_err());
}

#[test]
fn perturbations_are_small_against_lunar_gravity() {
    let (d, b) = shared();
    let ratios = |t: Epoch| {
        let x = b.reference_state(t).unwrap();
        let kepler = d.accel_kepler(&x).unwrap().norm();
        let r_km = x.r.norm() * d.scales.lu;
        (r_km, d.accel_j2(&x, t).unwrap().norm() / kepler, d.accel_srp(&x, t).unwrap().norm() / kepler)
    };
    // J2 peaks over the pole at perilune, SRP at apolune; between them both are minor.
    let (_, _, srp) = ratios(b.perilune_epochs[1]);
    assert!(srp < 1e-4, "perilune SRP {srp:e}");
    let (_, j2, _) = ratios(b.apolune_epochs[1]);
    assert!(j2 < 1e-4, "apolune J2 {j2:e}");
    let t0 = b.apolune_epochs[1];
    let t1 = *b.perilune_epochs.iter().find(|&&t| t > t0).unwrap();
    let mid: Vec<_> = (0..200)
        .map(|k| ratios(t0 + (t1 - t0) * k as f64 / 200.0))
        .filter(|p| (10_000.0..30_000.0).contains(&p.0))
        .collect();
    assert!(!mid.is_empty());
    for (r, j2, srp) in mid {
        assert!(j2 < 1e-4 && srp < 1e-4, "r {r:.0} km: J2 {j2:e}, SRP {srp:e}");
    }
}
