//! Circular restricted three-body halo orbits: symmetric differential
//! correction and pseudo-arclength continuation along the L2 family.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, RowVector4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::{integrate, IntegratorConfig};

/// A periodic CR3BP orbit. Coordinates are barycentric rotating and
/// nondimensional, with the Earth at `-mu` and the Moon at `1 - mu`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cr3bpOrbit {
    pub mass_ratio: f64,
    /// State at the xz-plane crossing south of the Moon.
    pub initial_state: [f64; 6],
    pub period: f64,
}

/// Southern L2 halo near the bottom of the family, used to start continuation.
/// Valid for Earth-Moon mass ratios; it is re-corrected for the requested one.
const SMALL_HALO_GUESS: [f64; 4] = [1.1800, -0.0300, -0.1550, 1.7];

const MAX_CORRECTIONS: usize = 50;
const CORRECTION_TOL: f64 = 1e-11;

fn cfg() -> IntegratorConfig {
    IntegratorConfig {
        rel_tol: 1e-13,
        abs_tol: 1e-13,
        max_step: 0.1,
        ..IntegratorConfig::default()
    }
}

fn accel_and_gradient(mu: f64, y: &[f64]) -> (Vector3<f64>, Matrix3<f64>) {
    let (x, yy, z, vx, vy) = (y[0], y[1], y[2], y[3], y[4]);
    let mut a = Vector3::new(2.0 * vy + x, -2.0 * vx + yy, 0.0);
    let mut g = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
    for (m, cx) in [(1.0 - mu, -mu), (mu, 1.0 - mu)] {
        let d = Vector3::new(x - cx, yy, z);
        let r2 = d.norm_squared();
        let r = r2.sqrt();
        let r3 = r2 * r;
        a -= d * (m / r3);
        g -= (Matrix3::identity() - d * d.transpose() * (3.0 / r2)) * (m / r3);
    }
    (a, g)
}

fn rhs(mu: f64) -> impl FnMut(f64, &[f64; 42]) -> std::result::Result<[f64; 42], String> {
    move |_, y| {
        let (a, g) = accel_and_gradient(mu, y);
        let mut out = [0.0; 42];
        out[..3].copy_from_slice(&y[3..6]);
        out[3] = a.x;
        out[4] = a.y;
        out[5] = a.z;
        let phi = &y[6..];
        out[6..24].copy_from_slice(&phi[18..36]);
        for i in 0..3 {
            for j in 0..6 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += g[(i, k)] * phi[k * 6 + j];
                }
                // Coriolis coupling: a_x += 2 v_y, a_y -= 2 v_x.
                s += match i {
                    0 => 2.0 * phi[4 * 6 + j],
                    1 => -2.0 * phi[3 * 6 + j],
                    _ => 0.0,
                };
                out[24 + i * 6 + j] = s;
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err("non-finite CR3BP derivative".into());
        }
        Ok(out)
    }
}

/// Flow and STM of the CR3BP over `duration`.
pub fn cr3bp_flow(mu: f64, x0: &[f64; 6], duration: f64) -> Result<([f64; 6], [[f64; 6]; 6])> {
    let mut y0 = [0.0; 42];
    y0[..6].copy_from_slice(x0);
    for i in 0..6 {
        y0[6 + 7 * i] = 1.0;
    }
    let mut f = rhs(mu);
    let (_, y) = integrate(&mut f, 0.0, y0, duration, &cfg(), |_, _| Ok(true)).map_err(|e| Error::Generation {
        reason: format!("CR3BP propagation failed: {}", e.reason),
    })?;
    let mut x = [0.0; 6];
    x.copy_from_slice(&y[..6]);
    let phi = std::array::from_fn(|i| std::array::from_fn(|j| y[6 + 6 * i + j]));
    Ok((x, phi))
}

fn derivative(mu: f64, x: &[f64; 6]) -> [f64; 6] {
    let (a, _) = accel_and_gradient(mu, x);
    [x[3], x[4], x[5], a.x, a.y, a.z]
}

/// Unknowns `(x0, z0, vy0, T/2)`.
type Unknowns = Vector4<f64>;

fn initial(p: &Unknowns) -> [f64; 6] {
    [p[0], 0.0, p[1], 0.0, p[2], 0.0]
}

/// Half-period residual `(y, vx, vz)` and its Jacobian.
fn residual(mu: f64, p: &Unknowns) -> Result<(Vector3<f64>, Matrix3x4<f64>, Flow)> {
    let (xf, phi) = cr3bp_flow(mu, &initial(p), p[3])?;
    let fd = derivative(mu, &xf);
    let rows = [1usize, 3, 5];
    let cols = [0usize, 2, 4];
    let mut j = Matrix3x4::zeros();
    for (r, &ri) in rows.iter().enumerate() {
        for (c, &ci) in cols.iter().enumerate() {
            j[(r, c)] = phi[ri][ci];
        }
        j[(r, 3)] = fd[ri];
    }
    Ok((Vector3::new(xf[1], xf[3], xf[5]), j, Flow { xf, phi }))
}

/// End state and STM of a half-period arc.
struct Flow {
    xf: [f64; 6],
    phi: [[f64; 6]; 6],
}

type Extra = (f64, RowVector4<f64>);

/// Newton on the symmetric residual plus one scalar equation `extra`.
fn correct<E>(mu: f64, mut p: Unknowns, mut extra: E) -> Result<Unknowns>
where
    E: FnMut(&Unknowns, &Flow) -> Extra,
{
    for _ in 0..MAX_CORRECTIONS {
        let (f, j, flow) = residual(mu, &p)?;
        let (g, dg) = extra(&p, &flow);
        if f.norm() < CORRECTION_TOL && g.abs() < CORRECTION_TOL {
            return Ok(p);
        }
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 4>(0, 0).copy_from(&j);
        m.set_row(3, &dg);
        let rhs = Vector4::new(-f.x, -f.y, -f.z, -g);
        let dp = m.lu().solve(&rhs).ok_or_else(|| Error::Generation {
            reason: "singular correction Jacobian".into(),
        })?;
        // Limit the update so a poor guess cannot jump across the family.
        let scale = (0.05 / dp.amax()).min(1.0);
        p += dp * scale;
        if p[3] <= 0.0 || !p.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(Error::Generation {
        reason: "differential correction did not converge".into(),
    })
}

fn orbit(mu: f64, p: &Unknowns) -> Cr3bpOrbit {
    Cr3bpOrbit {
        mass_ratio: mu,
        initial_state: initial(p),
        period: 2.0 * p[3],
    }
}

/// Unit tangent of the family: the null vector of the 3x4 Jacobian.
fn tangent(j: &Matrix3x4<f64>, previous: Option<&Unknowns>) -> Unknowns {
    let mut t = Unknowns::zeros();
    for k in 0..4 {
        let cols: Vec<usize> = (0..4).filter(|&c| c != k).collect();
        let minor = Matrix3::from_fn(|r, c| j[(r, cols[c])]);
        t[k] = if k % 2 == 0 { 1.0 } else { -1.0 } * minor.determinant();
    }
    t.normalize_mut();
    if let Some(prev) = previous {
        if t.dot(prev) < 0.0 {
            t = -t;
        }
    }
    t
}

/// Distance from the Moon at the opposite (perilune) crossing.
pub fn perilune_radius(orbit: &Cr3bpOrbit) -> Result<f64> {
    let (xf, _) = cr3bp_flow(orbit.mass_ratio, &orbit.initial_state, 0.5 * orbit.period)?;
    Ok(((xf[0] - 1.0 + orbit.mass_ratio).powi(2) + xf[1].powi(2) + xf[2].powi(2)).sqrt())
}

/// Time offsets from perilune splitting the half revolution up to apolune
/// into `count` arcs of equal integral of dt / r (r from the Moon).
pub(crate) fn sundman_offsets(orbit: &Cr3bpOrbit, count: usize) -> Result<Vec<f64>> {
    const SAMPLES: usize = 2000;
    let mu = orbit.mass_ratio;
    let half = 0.5 * orbit.period;
    let radius = |x: &[f64; 6]| ((x[0] - 1.0 + mu).powi(2) + x[1].powi(2) + x[2].powi(2)).sqrt();
    let h = half / SAMPLES as f64;
    let mut x = cr3bp_flow(mu, &orbit.initial_state, half)?.0;
    let mut cumulative = vec![0.0];
    let mut inv_prev = 1.0 / radius(&x);
    for _ in 0..SAMPLES {
        let mid = cr3bp_flow(mu, &x, 0.5 * h)?.0;
        x = cr3bp_flow(mu, &mid, 0.5 * h)?.0;
        let inv = 1.0 / radius(&x);
        let last = *cumulative.last().unwrap();
        cumulative.push(last + h / 6.0 * (inv_prev + 4.0 / radius(&mid) + inv));
        inv_prev = inv;
    }
    let total = cumulative[SAMPLES];
    let mut offsets = Vec::with_capacity(count + 1);
    offsets.push(0.0);
    let mut i = 0;
    for k in 1..count {
        let target = total * k as f64 / count as f64;
        while cumulative[i + 1] < target {
            i += 1;
        }
        let frac = (target - cumulative[i]) / (cumulative[i + 1] - cumulative[i]);
        offsets.push((i as f64 + frac) * h);
    }
    offsets.push(half);
    Ok(offsets)
}

fn small_halo(mu: f64) -> Result<Unknowns> {
    let g = SMALL_HALO_GUESS;
    let z0 = g[1];
    correct(mu, Unknowns::new(g[0], g[1], g[2], g[3]), |p, _| {
        (p[1] - z0, RowVector4::new(0.0, 1.0, 0.0, 0.0))
    })
}

/// Steps along the southern L2 family from a small halo until `stop` changes
/// sign, then corrects onto the root of `stop`.
fn continue_family<S>(mu: f64, mut stop: S) -> Result<Cr3bpOrbit>
where
    S: FnMut(&Unknowns, &Flow) -> Extra,
{
    if !(mu > 0.0 && mu < 0.5) {
        return Err(Error::invalid("mass ratio must lie in (0, 0.5)"));
    }
    let mut p = small_halo(mu)?;
    let (_, j, flow) = residual(mu, &p)?;
    let mut g_prev = stop(&p, &flow).0;
    // Head toward larger out-of-plane amplitude (more negative z0).
    let mut t = tangent(&j, None);
    if t[1] > 0.0 {
        t = -t;
    }
    let mut ds = 0.01;
    for _ in 0..5000 {
        let guess = p + t * ds;
        let t_fixed = t;
        let p_fixed = p;
        let next = correct(mu, guess, |q, _| ((q - p_fixed).dot(&t_fixed) - ds, t_fixed.transpose()));
        let q = match next {
            Ok(q) => q,
            Err(_) if ds > 1e-5 => {
                ds *= 0.5;
                continue;
            }
            Err(e) => {
                return Err(Error::Generation {
                    reason: format!("continuation left the family near {:?}: {e}", orbit(mu, &p)),
                })
            }
        };
        let (_, jq, fq) = residual(mu, &q)?;
        let (g, _) = stop(&q, &fq);
        if g.signum() != g_prev.signum() {
            // Final correction with the stopping condition as the extra equation.
            let found = correct(mu, q, &mut stop)?;
            return Ok(orbit(mu, &found));
        }
        t = tangent(&jq, Some(&t));
        p = q;
        g_prev = g;
        ds = (ds * 1.5).min(0.05);
    }
    Err(Error::Generation {
        reason: "continuation exhausted its step budget".into(),
    })
}

/// Family member with the given full period (nondimensional).
pub fn generate_cr3bp_by_period(mu: f64, period: f64) -> Result<Cr3bpOrbit> {
    if !(period > 0.0) {
        return Err(Error::invalid("target period must be positive"));
    }
    continue_family(mu, |p, _| (2.0 * p[3] - period, RowVector4::new(0.0, 0.0, 0.0, 2.0)))
}

/// Family member whose perilune distance from the Moon equals
/// `perilune_radius_target` (nondimensional).
pub fn generate_cr3bp_nrho(mu: f64, perilune_radius_target: f64) -> Result<Cr3bpOrbit> {
    if !(perilune_radius_target > 0.0) {
        return Err(Error::invalid("perilune radius must be positive"));
    }
    continue_family(mu, |_, flow| {
        let xf = &flow.xf;
        let d = Vector3::new(xf[0] - 1.0 + mu, xf[1], xf[2]);
        let r = d.norm();
        let u = d / r;
        let mut dg = RowVector4::zeros();
        for (c, ci) in [0usize, 2, 4].into_iter().enumerate() {
            dg[c] = (0..3).map(|k| u[k] * flow.phi[k][ci]).sum();
        }
        dg[3] = u.dot(&Vector3::new(xf[3], xf[4], xf[5]));
        (r - perilune_radius_target, dg)
    })
}
