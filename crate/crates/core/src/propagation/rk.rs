//! Adaptive DOP853 stepper over fixed-size state arrays.

use super::tableau::{A, B, C, E3, E5, STAGES};
use super::IntegratorConfig;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const ERROR_EXPONENT: f64 = -1.0 / 8.0;

/// Why a step sequence stopped early.
#[derive(Debug)]
pub(crate) struct Failure<const N: usize> {
    pub t: f64,
    pub y: [f64; N],
    pub reason: String,
}

/// An accepted step, with derivatives at both ends for Hermite interpolation.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Step<const N: usize> {
    pub t0: f64,
    pub y0: [f64; N],
    pub f0: [f64; N],
    pub t1: f64,
    pub y1: [f64; N],
    pub f1: [f64; N],
}

impl<const N: usize> Step<N> {
    /// Cubic Hermite interpolant on the step.
    pub fn interpolate(&self, t: f64) -> [f64; N] {
        let h = self.t1 - self.t0;
        let s = (t - self.t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        std::array::from_fn(|i| {
            h00 * self.y0[i] + h10 * h * self.f0[i] + h01 * self.y1[i] + h11 * h * self.f1[i]
        })
    }
}

pub(crate) trait Rhs<const N: usize> {
    fn eval(&mut self, t: f64, y: &[f64; N]) -> Result<[f64; N], String>;
}

impl<const N: usize, F> Rhs<N> for F
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N], String>,
{
    fn eval(&mut self, t: f64, y: &[f64; N]) -> Result<[f64; N], String> {
        self(t, y)
    }
}

/// One DOP853 step of size `h` from `(t, y)` with `f = rhs(t, y)`. Returns the
/// new state, its derivative, and the scaled error norm.
pub(crate) fn rk_step<const N: usize, R: Rhs<N>>(
    rhs: &mut R,
    t: f64,
    y: &[f64; N],
    f: &[f64; N],
    h: f64,
    cfg: &IntegratorConfig,
) -> Result<([f64; N], [f64; N], f64), String> {
    let mut k = [[0.0; N]; STAGES + 1];
    k[0] = *f;
    for s in 1..STAGES {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            let a = A[s][j];
            if a != 0.0 {
                for i in 0..N {
                    ys[i] += h * a * kj[i];
                }
            }
        }
        k[s] = rhs.eval(t + C[s] * h, &ys)?;
    }
    let mut y_new = *y;
    for (j, kj) in k.iter().enumerate().take(STAGES) {
        let b = B[j];
        if b != 0.0 {
            for i in 0..N {
                y_new[i] += h * b * kj[i];
            }
        }
    }
    let f_new = rhs.eval(t + h, &y_new)?;
    k[STAGES] = f_new;

    let mut e5 = 0.0;
    let mut e3 = 0.0;
    for i in 0..N {
        let scale = cfg.abs_tol + y[i].abs().max(y_new[i].abs()) * cfg.rel_tol;
        let mut a5 = 0.0;
        let mut a3 = 0.0;
        for (j, kj) in k.iter().enumerate() {
            a5 += kj[i] * E5[j];
            a3 += kj[i] * E3[j];
        }
        e5 += (a5 / scale).powi(2);
        e3 += (a3 / scale).powi(2);
    }
    let err = if e5 == 0.0 && e3 == 0.0 {
        0.0
    } else {
        h.abs() * e5 / ((e5 + 0.01 * e3) * N as f64).sqrt()
    };
    if y_new.iter().chain(f_new.iter()).any(|v| !v.is_finite()) {
        return Err("non-finite state".into());
    }
    Ok((y_new, f_new, err))
}

fn rms_norm<const N: usize>(x: &[f64; N], scale: &[f64; N]) -> f64 {
    (x.iter().zip(scale).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / N as f64).sqrt()
}

/// Starting step size following Hairer's heuristic.
fn initial_step<const N: usize, R: Rhs<N>>(
    rhs: &mut R,
    t0: f64,
    y0: &[f64; N],
    f0: &[f64; N],
    dir: f64,
    cfg: &IntegratorConfig,
) -> Result<f64, String> {
    let scale: [f64; N] = std::array::from_fn(|i| cfg.abs_tol + y0[i].abs() * cfg.rel_tol);
    let d0 = rms_norm(y0, &scale);
    let d1 = rms_norm(f0, &scale);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(cfg.max_step);
    let y1: [f64; N] = std::array::from_fn(|i| y0[i] + dir * h0 * f0[i]);
    let f1 = rhs.eval(t0 + dir * h0, &y1)?;
    let df: [f64; N] = std::array::from_fn(|i| f1[i] - f0[i]);
    let d2 = rms_norm(&df, &scale) / h0;
    let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 8.0)
    };
    Ok((100.0 * h0).min(h1).min(cfg.max_step).max(cfg.min_step))
}

/// Integrates from `t0` to `t1` (either direction), calling `observer` on every
/// accepted step. The observer may return `false` to stop early, in which case
/// the last accepted step end is returned.
pub(crate) fn integrate<const N: usize, R, O>(
    rhs: &mut R,
    t0: f64,
    y0: [f64; N],
    t1: f64,
    cfg: &IntegratorConfig,
    mut observer: O,
) -> Result<(f64, [f64; N]), Failure<N>>
where
    R: Rhs<N>,
    O: FnMut(&Step<N>, &mut R) -> Result<bool, String>,
{
    if t1 == t0 {
        return Ok((t0, y0));
    }
    let dir = (t1 - t0).signum();
    let fail = |t: f64, y: [f64; N], reason: String| Failure { t, y, reason };
    let mut t = t0;
    let mut y = y0;
    let mut f = rhs.eval(t, &y).map_err(|e| fail(t, y, e))?;
    let mut h = initial_step(rhs, t, &y, &f, dir, cfg).map_err(|e| fail(t, y, e))?;
    let mut steps = 0usize;

    loop {
        let remaining = (t1 - t).abs();
        if remaining == 0.0 {
            return Ok((t, y));
        }
        let mut rejected = false;
        loop {
            steps += 1;
            if steps > cfg.max_steps {
                return Err(fail(t, y, "maximum step count exceeded".into()));
            }
            let mut h_try = h.min(cfg.max_step);
            let last = h_try >= remaining;
            if last {
                h_try = remaining;
            }
            let t_new = if last { t1 } else { t + dir * h_try };
            let h_signed = t_new - t;
            match rk_step(rhs, t, &y, &f, h_signed, cfg) {
                Ok((y_new, f_new, err)) if err <= 1.0 => {
                    let mut factor = if err == 0.0 {
                        MAX_FACTOR
                    } else {
                        (SAFETY * err.powf(ERROR_EXPONENT)).min(MAX_FACTOR)
                    };
                    if rejected {
                        factor = factor.min(1.0);
                    }
                    let step = Step {
                        t0: t,
                        y0: y,
                        f0: f,
                        t1: t_new,
                        y1: y_new,
                        f1: f_new,
                    };
                    t = t_new;
                    y = y_new;
                    f = f_new;
                    if !last {
                        h = h_try * factor;
                    }
                    let go_on = observer(&step, rhs).map_err(|e| fail(t, y, e))?;
                    if !go_on {
                        return Ok((t, y));
                    }
                    break;
                }
                Ok((_, _, err)) => {
                    h = h_try * (SAFETY * err.powf(ERROR_EXPONENT)).max(MIN_FACTOR);
                }
                // A failed evaluation (e.g. a non-finite trial state) is
                // treated as a rejection with the minimum reduction.
                Err(_) if h_try > cfg.min_step => h = h_try * MIN_FACTOR,
                Err(e) => return Err(fail(t, y, e)),
            }
            rejected = true;
            if h < cfg.min_step {
                return Err(fail(t, y, format!("step size {h:.3e} below minimum")));
            }
        }
    }
}
