//! Variable-time multiple shooting under the full dynamics.
//!
//! Each node carries a state and an epoch; the first epoch is pinned. Free
//! epochs let along-track phase errors be absorbed by timing rather than by
//! large state corrections near perilune.

use nalgebra::{Matrix6, SMatrix, SVector, Vector6};
use rayon::prelude::*;

use crate::dynamics::{Dynamics, StateVector};
use crate::error::{Error, Result};
use crate::frames::Epoch;
use crate::propagation::{propagate_with_stm, IntegratorConfig};

type Block = SMatrix<f64, 6, 7>;
type NodeStep = SVector<f64, 7>;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ShootingOptions {
    pub max_iterations: usize,
    /// Convergence thresholds on joint defects (canonical).
    pub position_tol: f64,
    pub velocity_tol: f64,
    /// Defects the caller is willing to accept if iterations run out.
    pub position_limit: f64,
    pub velocity_limit: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct ShootingResult {
    pub epochs: Vec<Epoch>,
    pub nodes: Vec<StateVector>,
    pub max_position_defect: f64,
    pub max_velocity_defect: f64,
    pub iterations: usize,
}

/// Corrects `nodes` and all but the first of `epochs` so consecutive
/// segments join continuously, using the minimum-norm Newton update.
pub(crate) fn multiple_shooting(
    d: &Dynamics,
    mut epochs: Vec<Epoch>,
    mut nodes: Vec<StateVector>,
    cfg: &IntegratorConfig,
    opts: &ShootingOptions,
) -> Result<ShootingResult> {
    if epochs.len() != nodes.len() || epochs.len() < 2 {
        return Err(Error::invalid("multiple shooting needs matching epochs and nodes"));
    }
    let diverged = |worst: (f64, f64)| Error::Refinement {
        worst_position_km: worst.0 * d.scales.lu,
        worst_velocity_kms: worst.1 * d.scales.vu,
    };
    let mut eval = evaluate(d, &epochs, &nodes, cfg)?;
    'newton: for iteration in 0..=opts.max_iterations {
        let worst = eval.worst;
        log::debug!(
            "multiple shooting iteration {iteration}: max defects {:.3e} LU, {:.3e} VU",
            worst.0,
            worst.1
        );
        if worst.0 <= opts.position_tol && worst.1 <= opts.velocity_tol {
            return Ok(ShootingResult {
                epochs,
                nodes,
                max_position_defect: worst.0,
                max_velocity_defect: worst.1,
                iterations: iteration,
            });
        }
        if iteration == opts.max_iterations {
            break;
        }
        let step = eval.newton_step()?;
        // Backtrack on the defect norm; the full step is taken near convergence.
        let mut alpha = 1.0;
        loop {
            let (trial_epochs, trial_nodes) = apply_step(d, &epochs, &nodes, &step, alpha);
            match evaluate(d, &trial_epochs, &trial_nodes, cfg) {
                Ok(e) if e.norm < eval.norm => {
                    epochs = trial_epochs;
                    nodes = trial_nodes;
                    eval = e;
                    break;
                }
                Ok(_) | Err(Error::PropagationFailure { .. }) if alpha > 1.0 / 64.0 => alpha *= 0.5,
                // No further decrease: the defects sit at the integrator noise floor.
                Ok(_) | Err(Error::PropagationFailure { .. }) => break 'newton,
                Err(e) => return Err(e),
            }
        }
    }
    let worst = eval.worst;
    if worst.0 <= opts.position_limit && worst.1 <= opts.velocity_limit {
        log::debug!("multiple shooting stopped at the acceptance limit");
        return Ok(ShootingResult {
            epochs,
            nodes,
            max_position_defect: worst.0,
            max_velocity_defect: worst.1,
            iterations: opts.max_iterations,
        });
    }
    Err(diverged(worst))
}

fn apply_step(
    d: &Dynamics,
    epochs: &[Epoch],
    nodes: &[StateVector],
    step: &[NodeStep],
    alpha: f64,
) -> (Vec<Epoch>, Vec<StateVector>) {
    let epochs = epochs
        .iter()
        .zip(step)
        .map(|(&t, s)| t - alpha * s[6] * d.scales.tu)
        .collect();
    let nodes = nodes
        .iter()
        .zip(step)
        .map(|(x, s)| StateVector::from_vector(&(x.to_vector() - alpha * s.fixed_rows::<6>(0))))
        .collect();
    (epochs, nodes)
}

/// Segment partials: `a` with respect to the start node and `b` with
/// respect to the end node, each over (state, epoch in TU).
struct Evaluation {
    a: Vec<Block>,
    b: Vec<Block>,
    defects: Vec<Vector6<f64>>,
    worst: (f64, f64),
    norm: f64,
}

fn evaluate(d: &Dynamics, epochs: &[Epoch], nodes: &[StateVector], cfg: &IntegratorConfig) -> Result<Evaluation> {
    if let Some(w) = epochs.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::PropagationFailure {
            epoch: epochs[w],
            last_state: Box::new(nodes[w]),
            reason: "shooting epochs lost their ordering".into(),
        });
    }
    let nseg = epochs.len() - 1;
    let segments: Vec<(Block, Block, Vector6<f64>)> = (0..nseg)
        .into_par_iter()
        .map(|j| {
            let (xf, phi) = propagate_with_stm(d, &nodes[j], epochs[j], epochs[j + 1], cfg)?;
            let mut a = Block::zeros();
            a.fixed_view_mut::<6, 6>(0, 0).copy_from(&phi.0);
            if j > 0 {
                a.set_column(6, &(-phi.0 * derivative(d, &nodes[j], epochs[j])?));
            }
            let mut b = Block::zeros();
            b.fixed_view_mut::<6, 6>(0, 0).copy_from(&(-Matrix6::identity()));
            b.set_column(6, &derivative(d, &xf, epochs[j + 1])?);
            Ok((a, b, xf.to_vector() - nodes[j + 1].to_vector()))
        })
        .collect::<Result<_>>()?;
    let mut a = Vec::with_capacity(nseg);
    let mut b = Vec::with_capacity(nseg);
    let mut defects = Vec::with_capacity(nseg);
    for (aj, bj, e) in segments {
        a.push(aj);
        b.push(bj);
        defects.push(e);
    }
    let worst = defects.iter().fold((0.0f64, 0.0f64), |(p, v), e| {
        (p.max(e.fixed_rows::<3>(0).norm()), v.max(e.fixed_rows::<3>(3).norm()))
    });
    let norm = defects.iter().map(|e| e.norm_squared()).sum::<f64>().sqrt();
    Ok(Evaluation {
        a,
        b,
        defects,
        worst,
        norm,
    })
}

fn derivative(d: &Dynamics, x: &StateVector, t: Epoch) -> Result<Vector6<f64>> {
    let acc = d.accel_total(x, t)?;
    Ok(Vector6::new(x.v.x, x.v.y, x.v.z, acc.x, acc.y, acc.z))
}

impl Evaluation {
    /// Minimum-norm solution of DF Δ = D, expanded per node.
    fn newton_step(&self) -> Result<Vec<NodeStep>> {
        let lambda = solve_normal_equations(&self.a, &self.b, &self.defects)?;
        let n = self.a.len();
        Ok((0..=n)
            .map(|k| {
                let mut s = NodeStep::zeros();
                if k < n {
                    s += self.a[k].transpose() * lambda[k];
                }
                if k > 0 {
                    s += self.b[k - 1].transpose() * lambda[k - 1];
                }
                s
            })
            .collect())
    }
}

/// Solves (DF DFᵀ) λ = D where row block j of DF is `a[j]` at node j and
/// `b[j]` at node j + 1, which makes the system block tridiagonal.
fn solve_normal_equations(a: &[Block], b: &[Block], defects: &[Vector6<f64>]) -> Result<Vec<Vector6<f64>>> {
    let n = a.len();
    let diag = |j: usize| a[j] * a[j].transpose() + b[j] * b[j].transpose();
    let upper = |j: usize| b[j] * a[j + 1].transpose();
    let singular = || Error::Generation {
        reason: "singular multiple-shooting normal equations".into(),
    };

    let mut c_inv = Vec::with_capacity(n);
    let mut rhs = Vec::with_capacity(n);
    c_inv.push(diag(0).try_inverse().ok_or_else(singular)?);
    rhs.push(defects[0]);
    for j in 1..n {
        let u = upper(j - 1);
        let l = u.transpose() * c_inv[j - 1];
        let c = diag(j) - l * u;
        c_inv.push(c.try_inverse().ok_or_else(singular)?);
        rhs.push(defects[j] - l * rhs[j - 1]);
    }
    let mut lambda = vec![Vector6::zeros(); n];
    lambda[n - 1] = c_inv[n - 1] * rhs[n - 1];
    for j in (0..n - 1).rev() {
        lambda[j] = c_inv[j] * (rhs[j] - upper(j) * lambda[j + 1]);
    }
    Ok(lambda)
}
