use std::sync::OnceLock;

use nalgebra::{Matrix3, Matrix6x3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use nrhosk::baseline::{generate_baseline, BaselineConfig, BaselineOrbit};
use nrhosk::dynamics::{Dynamics, StateVector};
use nrhosk::frames::{em_rotating_frame, Epoch};
use nrhosk::propagation::{find_event, propagate_controlled, propagate_with_stm, EventSpec, ImpulsiveManeuver, IntegratorConfig};
use nrhosk::skmpc::*;

fn shared() -> &'static (Dynamics, BaselineOrbit) {
    static B: OnceLock<(Dynamics, BaselineOrbit)> = OnceLock::new();
    B.get_or_init(|| {
        let d = Dynamics::nominal();
        let cfg = BaselineConfig {
            revolutions: 12,
            ..Default::default()
        };
        let b = generate_baseline(&d, &cfg, &IntegratorConfig::default()).unwrap();
        (d, b)
    })
}

/// Baseline state at the maneuver anomaly following apolune `i`.
fn maneuver_point(i: usize) -> (Epoch, StateVector) {
    let (d, b) = shared();
    let cfg = SkmpcConfig::default();
    let ta = b.apolune_epochs[i];
    let xa = b.reference_state(ta).unwrap();
    find_event(d, &xa, ta, &EventSpec::true_anomaly(cfg.theta_man), b.mean_period(), &IntegratorConfig::default())
        .unwrap()
        .unwrap()
}

fn reduced_problem(dv: Vector3<f64>, c: f64, eps_v: f64, u_max: f64) -> SocpProblem {
    let mut drift = Vector6::zeros();
    drift.fixed_rows_mut::<3>(3).copy_from(&dv);
    SocpProblem {
        phi_rv_blocks: vec![Matrix3::zeros()],
        phi_vv_blocks: vec![Matrix3::identity() * c],
        drift_terminal: drift,
        reference_terminal: Vector6::zeros(),
        eps_r: 1e3,
        eps_v,
        u_max,
    }
}

/// Minimum ‖u‖ over a uniform 3-D grid, refined around the incumbent.
fn grid_search(p: &SocpProblem) -> f64 {
    let feasible = |u: &Vector3<f64>| p.max_violation(&[*u]) <= 0.0;
    let mut center = Vector3::zeros();
    let mut half = p.u_max;
    let n = 40;
    let mut best = f64::INFINITY;
    for _ in 0..30 {
        let h = 2.0 * half / n as f64;
        let mut incumbent = None;
        for i in 0..=n {
            for j in 0..=n {
                for k in 0..=n {
                    let u = center + Vector3::new(i as f64, j as f64, k as f64) * h - Vector3::repeat(half);
                    if u.norm() < best && feasible(&u) {
                        best = u.norm();
                        incumbent = Some(u);
                    }
                }
            }
        }
        if let Some(u) = incumbent {
            center = u;
        }
        half = 3.0 * h;
    }
    best
}

#[test]
fn velocity_only_instance_matches_closed_form_and_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..6 {
        let c = rng.gen_range(0.5..2.0);
        let eps_v = rng.gen_range(0.2..1.0);
        let dv = Vector3::from_fn(|_, _| rng.gen_range(-2.0..2.0)) * if case == 0 { 0.05 } else { 1.0 };
        let p = reduced_problem(dv, c, eps_v, 10.0);
        let sol = solve_socp(&p).unwrap();
        assert_eq!(sol.status, SocpStatus::Optimal);
        let closed = (dv.norm() - eps_v).max(0.0) / c;
        let grid = grid_search(&p);
        assert!((sol.objective - closed).abs() < 1e-6, "case {case}: {} vs {closed}", sol.objective);
        assert!((sol.objective - grid).abs() < 1e-6, "case {case}: {} vs grid {grid}", sol.objective);
        assert!(p.max_violation(&sol.controls) <= 1e-7);
    }
}

#[test]
fn tiny_control_bound_is_reported_infeasible() {
    let p = reduced_problem(Vector3::new(3.0, 0.0, 0.0), 1.0, 0.5, 1e-12);
    let sol = solve_socp(&p).unwrap();
    assert_eq!(sol.status, SocpStatus::Infeasible);
}

fn two_impulse_problem(rng: &mut ChaCha8Rng, drift_scale: f64) -> SocpProblem {
    let mut m = || Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
    let (rv0, rv1, vv0, vv1) = (m(), m(), m(), m());
    let drift = Vector6::from_fn(|_, _| rng.gen_range(-1.0..1.0)) * drift_scale;
    SocpProblem {
        phi_rv_blocks: vec![rv0 * 50.0, rv1 * 30.0],
        phi_vv_blocks: vec![vv0 * 5.0, vv1 * 3.0],
        drift_terminal: drift,
        reference_terminal: Vector6::zeros(),
        eps_r: 0.05,
        eps_v: 0.02,
        u_max: 1.0,
    }
}

#[test]
fn optimal_solutions_pass_independent_recheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut solved = 0;
    for _ in 0..40 {
        let p = two_impulse_problem(&mut rng, 0.5);
        let sol = solve_socp(&p).unwrap();
        assert_eq!(sol.controls.len(), 2);
        assert!(matches!(sol.status, SocpStatus::Optimal | SocpStatus::Infeasible));
        if sol.status == SocpStatus::Optimal {
            solved += 1;
            assert!(p.max_violation(&sol.controls) <= 1e-7);
            let norms: f64 = sol.controls.iter().map(|u| u.norm()).sum();
            assert!((norms - sol.objective).abs() <= 1e-12);
        }
    }
    assert!(solved >= 30, "only {solved} of 40 instances solved");
}

#[test]
fn construction_counts_and_zero_solution_inside_the_set() {
    let (d, _) = shared();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let blocks: Vec<Matrix6x3<f64>> = (0..2).map(|_| Matrix6x3::from_fn(|_, _| rng.gen_range(-1.0..1.0))).collect();
    let cfg = SkmpcConfig::default();
    let reference = Vector6::new(0.1, 0.2, -0.3, 0.01, 0.0, 0.02);
    let mut drift = reference;
    drift[0] += 0.5 * cfg.eps_r_km / d.scales.lu;
    drift[5] += 0.5 * cfg.eps_v_ms * 1e-3 / d.scales.vu;
    let p = assemble_socp(&drift, &reference, &blocks, &cfg, &d.scales).unwrap();
    assert_eq!((p.n_variables(), p.n_cones()), (8, 6));
    assert!((p.eps_r * d.scales.lu - 25.0).abs() < 1e-12);
    assert!((p.eps_v * d.scales.vu * 1e3 - 5.0).abs() < 1e-12);
    assert!(p.max_violation(&[Vector3::zeros(), Vector3::zeros()]) < 0.0);
    let sol = solve_socp(&p).unwrap();
    assert_eq!(sol.status, SocpStatus::Optimal);
    assert!(sol.objective <= 1e-9, "objective {}", sol.objective);

    let short = [blocks[0]];
    let mismatched = SocpProblem {
        phi_vv_blocks: vec![],
        ..assemble_socp(&drift, &reference, &short, &cfg, &d.scales).unwrap()
    };
    assert!(solve_socp(&mismatched).is_err());
}

#[test]
fn controllability_rank_of_stacked_blocks() {
    let (d, b) = shared();
    let cfg = SkmpcConfig::default();
    let icfg = IntegratorConfig::default();
    let (t0, x0) = maneuver_point(1);
    let h = plan_horizon(d, t0, &x0, b, &cfg, &icfg).unwrap();
    let period = b.mean_period();
    let t = &h.maneuver_epochs;
    assert_eq!(t.len(), 2);
    assert_eq!(t[0], t0);
    assert!(((t[1] - t[0]) / period - 1.0).abs() < 0.1);
    assert!(((h.target_epoch - t0) / (6.0 * period) - 1.0).abs() < 0.1);

    let (x1, phi01) = propagate_with_stm(d, &x0, t[0], t[1], &icfg).unwrap();
    let (_, phi1n) = propagate_with_stm(d, &x1, t[1], h.target_epoch, &icfg).unwrap();
    let blocks = [(phi1n.0 * phi01.0).fixed_view::<6, 3>(0, 3).into_owned(), phi1n.velocity_columns()];
    assert_eq!(controllability_rank(&blocks), 6);
    assert!(controllability_rank(&blocks[..1]) <= 3);
    assert_eq!(controllability_rank(&[blocks[0], blocks[0]]), 3);
}

#[test]
fn on_baseline_start_needs_no_control() {
    let (d, b) = shared();
    let (t0, x0) = maneuver_point(1);
    let plan = sequential_skmpc(d, t0, &x0, b, &SkmpcConfig::default(), &IntegratorConfig::default()).unwrap();
    assert!(plan.converged);
    assert_eq!(plan.iterations_used, 0);
    assert!(plan.controls.iter().all(|u| u.norm() == 0.0));
}

#[test]
fn perturbed_start_converges_and_verifies_independently() {
    let (d, b) = shared();
    let cfg = SkmpcConfig::default();
    let icfg = IntegratorConfig::default();
    let (t0, x0) = maneuver_point(2);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
    let dr = Vector3::new(g(), g(), g()) * (10.0 / 3.0) / d.scales.lu;
    let dv = Vector3::new(g(), g(), g()) * (1e-5 / 3.0) / d.scales.vu;
    let start = StateVector::new(x0.r + dr, x0.v + dv);

    let plan = sequential_skmpc(d, t0, &start, b, &cfg, &icfg).unwrap();
    assert!(plan.converged, "{:#?}", plan.diagnostics);
    assert!(plan.iterations_used >= 1 && plan.iterations_used <= cfg.max_iterations);
    assert!(plan.epochs.windows(2).all(|w| w[1] > w[0]));
    let errors: Vec<f64> = plan.diagnostics.iter().map(|r| r.terminal_position_error_km).collect();
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");

    let maneuvers: Vec<ImpulsiveManeuver> = plan
        .epochs
        .iter()
        .zip(&plan.controls)
        .map(|(&epoch, &dv)| ImpulsiveManeuver { epoch, dv })
        .collect();
    let xn = propagate_controlled(d, &start, t0, plan.target_epoch, &maneuvers, &icfg).unwrap();
    let frame = em_rotating_frame(plan.target_epoch, d.ephemeris());
    let reference = b.reference_state(plan.target_epoch).unwrap();
    let diff = frame.state_to_frame(&xn, d.scales.tu).to_vector() - frame.state_to_frame(&reference, d.scales.tu).to_vector();
    let (er, ev) = residual_norms(&diff, &d.scales);
    assert!(er < cfg.eps_r_km && ev < cfg.eps_v_ms, "{er} km, {ev} m/s");
}

#[test]
fn horizon_beyond_baseline_is_an_error() {
    let (d, b) = shared();
    let last = *b.apolune_epochs.last().unwrap();
    let x = b.reference_state(last).unwrap();
    let r = plan_horizon(d, last, &x, b, &SkmpcConfig::default(), &IntegratorConfig::default());
    assert!(matches!(r, Err(nrhosk::Error::Horizon(_))));
}
