//! Time stepping: the Milstein scheme and its Euler-Maruyama reduction.
//!
//! Each step solves the implicit saddle-point system with the explicit noise
//! contribution on the right-hand side:
//!
//! ```text
//! (u^{n+1} - u^n, v) + nu k (grad u^{n+1}, grad v) - k (p^{n+1}, div v)
//!     = k (f(t_{n+1}), v)
//!     + (G(u^n) dW_n + w_n DG(u^n)G(u^n), v)
//! (div u^{n+1}, q) = 0
//! ```
//!
//! with the Milstein weight `w_n = ((dW_n)^2 - k)/2`; dropping the weighted
//! correction term (w_n = 0) gives the Euler-Maruyama scheme.

use crate::assembly::{assemble_load, noise_rhs_weighted, SparseOperator};
use crate::error::{Error, Result};
use crate::femspace::MixedSpaces;
use crate::linsolve::{Factorization, SaddleSystem, StepSolution};
use crate::manufactured::ForcingSpec;
use crate::stochastic::{milstein_weight, NoiseModel};

/// Which noise discretization a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Milstein,
    EulerMaruyama,
}

/// Everything a step needs that outlives individual steps: spaces, global
/// operators, and the factorized system (all shareable across samples).
#[derive(Clone, Copy)]
pub struct StepOperators<'a> {
    pub spaces: &'a MixedSpaces,
    pub mass: &'a SparseOperator,
    pub divergence: &'a SparseOperator,
    pub system: &'a SaddleSystem,
    pub fact: &'a Factorization,
}

/// Where the load vectors of a run come from.
#[derive(Clone, Copy)]
pub enum LoadPlan<'a> {
    /// No body force.
    None,
    /// Assemble the manufactured load at each step time on the fly.
    Assemble(&'a ForcingSpec),
    /// Precomputed table on a finer time grid: `loads[j]` is the load at
    /// time `(j+1) * k_fine`. A run whose step size is `stride * k_fine`
    /// reads entry `stride * (n+1) - 1` for its step `n`, so runs at every
    /// coarsening level share bit-identical load vectors.
    Table {
        loads: &'a [Vec<f64>],
        stride: usize,
    },
}

impl<'a> LoadPlan<'a> {
    fn load_for_step(&self, spaces: &MixedSpaces, step: usize, t_next: f64) -> Option<Vec<f64>> {
        match self {
            LoadPlan::None => None,
            LoadPlan::Assemble(forcing) => Some(assemble_load(spaces, t_next, forcing)),
            LoadPlan::Table { loads, stride } => Some(loads[stride * (step + 1) - 1].clone()),
        }
    }
}

/// A full time-discrete sample path of the velocity/pressure pair, plus the
/// structural invariants tracked while it was computed.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub k: f64,
    pub steps: usize,
    /// Velocity coefficients per time level; `u[0]` is the initial state.
    pub u: Vec<Vec<f64>>,
    /// Pressure coefficients per solved step (`p[n-1]` belongs to `t_n`).
    pub p: Vec<Vec<f64>>,
    /// `max_n || B u^n ||_inf` over solved steps.
    pub max_divergence: f64,
    /// `max_n | integral of p^n |`.
    pub max_pressure_mean: f64,
    /// Largest relative residual reported by the linear solver.
    pub max_rel_residual: f64,
}

/// One Milstein step from state `u` with increment `dw`. `load` is the
/// already-assembled load at the target time (`None` for zero forcing).
pub fn milstein_step(
    ops: &StepOperators,
    u: &[f64],
    dw: f64,
    model: &dyn NoiseModel,
    load: Option<&[f64]>,
) -> Result<StepSolution> {
    step_with_weight(ops, u, dw, milstein_weight(dw, ops.system.k), model, load)
}

/// One Euler-Maruyama step: same drift, noise without the Milstein
/// correction.
pub fn euler_maruyama_step(
    ops: &StepOperators,
    u: &[f64],
    dw: f64,
    model: &dyn NoiseModel,
    load: Option<&[f64]>,
) -> Result<StepSolution> {
    step_with_weight(ops, u, dw, 0.0, model, load)
}

fn step_with_weight(
    ops: &StepOperators,
    u: &[f64],
    dw: f64,
    weight: f64,
    model: &dyn NoiseModel,
    load: Option<&[f64]>,
) -> Result<StepSolution> {
    let k = ops.system.k;
    let mut rhs = ops.mass.apply(u);
    if let Some(l) = load {
        if l.len() != rhs.len() {
            return Err(Error::Incompatible(format!(
                "load vector length {} does not match velocity dimension {}",
                l.len(),
                rhs.len()
            )));
        }
        for (r, li) in rhs.iter_mut().zip(l) {
            *r += k * li;
        }
    }
    let noise = noise_rhs_weighted(ops.mass, model, u, dw, weight)?;
    for (r, ni) in rhs.iter_mut().zip(&noise) {
        *r += ni;
    }
    ops.system.solve_step(ops.fact, &rhs)
}

/// Runs a full trajectory from `u0` over the given increments.
///
/// The step size is `t_final / increments.len()` and must match the step
/// size the system was assembled with.
pub fn run_trajectory(
    ops: &StepOperators,
    scheme: Scheme,
    u0: &[f64],
    t_final: f64,
    increments: &[f64],
    model: &dyn NoiseModel,
    loads: &LoadPlan,
) -> Result<Trajectory> {
    let steps = increments.len();
    if steps == 0 {
        return Err(Error::InvalidParameter("trajectory needs steps".into()));
    }
    if u0.len() != ops.spaces.n_vel {
        return Err(Error::Incompatible(format!(
            "initial state length {} does not match velocity dimension {}",
            u0.len(),
            ops.spaces.n_vel
        )));
    }
    let k = t_final / steps as f64;
    if (k - ops.system.k).abs() > 1e-14 * k.max(ops.system.k) {
        return Err(Error::Incompatible(format!(
            "system assembled for step size {}, trajectory uses {}",
            ops.system.k, k
        )));
    }
    if let LoadPlan::Table { loads, stride } = loads {
        if *stride == 0 || loads.len() < *stride * steps {
            return Err(Error::Incompatible(format!(
                "load table with {} entries cannot serve {steps} steps at stride {stride}",
                loads.len()
            )));
        }
    }

    let mut u_hist = Vec::with_capacity(steps + 1);
    u_hist.push(u0.to_vec());
    let mut p_hist = Vec::with_capacity(steps);
    let mut max_divergence = 0.0f64;
    let mut max_pressure_mean = 0.0f64;
    let mut max_rel_residual = 0.0f64;

    for (n, dw) in increments.iter().enumerate() {
        let t_next = (n + 1) as f64 * k;
        let load = loads.load_for_step(ops.spaces, n, t_next);
        let weight = match scheme {
            Scheme::Milstein => milstein_weight(*dw, k),
            Scheme::EulerMaruyama => 0.0,
        };
        let sol = step_with_weight(
            ops,
            u_hist.last().expect("history is never empty"),
            *dw,
            weight,
            model,
            load.as_deref(),
        )?;
        let div = ops.divergence.apply(&sol.u);
        max_divergence = max_divergence.max(div.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        max_pressure_mean = max_pressure_mean.max(ops.system.pressure_mean(&sol.p).abs());
        max_rel_residual = max_rel_residual.max(sol.rel_residual);
        u_hist.push(sol.u);
        p_hist.push(sol.p);
    }

    Ok(Trajectory {
        k,
        steps,
        u: u_hist,
        p: p_hist,
        max_divergence,
        max_pressure_mean,
        max_rel_residual,
    })
}

/// The running time integral of the pressure: `P^m = k * sum_{n<=m} p^n`.
/// The instantaneous pressure is its backward difference quotient, which is
/// how coarse and fine pressures are aligned in error measurement.
pub fn time_averaged_pressure(traj: &Trajectory, m: usize) -> Vec<f64> {
    assert!(m <= traj.steps, "requested level beyond the trajectory");
    let dim = traj.p.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for p in &traj.p[..m] {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    for o in out.iter_mut() {
        *o *= traj.k;
    }
    out
}
