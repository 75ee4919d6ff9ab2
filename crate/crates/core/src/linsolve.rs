//! The per-step saddle-point system and its sparse factorization.
//!
//! One implicit step couples the velocity update, the pressure, and a single
//! Lagrange multiplier enforcing the zero-mean pressure gauge:
//!
//! ```text
//! [ M + nu k A   -k B^T    0 ] [u]   [rhs]
//! [ B             0        c ] [p] = [ 0 ]
//! [ 0             c^T      0 ] [l]   [ 0 ]
//! ```
//!
//! restricted to unconstrained velocity DOFs (homogeneous Dirichlet rows and
//! columns are eliminated; bubbles are always unconstrained). `c` holds the
//! integrals of the pressure basis functions, so the multiplier pins
//! `integral(p) = 0` exactly in the algebra rather than by post-correction.
//! The system matrix is time-independent: it is factorized once and reused
//! for every step and every sample on the same mesh/step-size pair.

use crate::assembly::SparseOperator;
use crate::error::{Error, Result};
use crate::femspace::MixedSpaces;
use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};

/// The reduced saddle-point operator for one (mesh, step-size) pair.
#[derive(Debug)]
pub struct SaddleSystem {
    /// Total system dimension: free velocity DOFs + pressure DOFs + 1.
    pub dim: usize,
    pub n_free: usize,
    pub n_press: usize,
    pub nu: f64,
    pub k: f64,
    /// Full velocity DOF index of each reduced index.
    pub free_of_full: Vec<usize>,
    /// Reduced index of each full velocity DOF (`usize::MAX` if constrained).
    pub full_to_free: Vec<usize>,
    /// Pressure basis integrals (the gauge functional).
    pub c: Vec<f64>,
    /// The assembled system in canonical sparse form.
    op: SparseOperator,
}

/// A reusable sparse LU factorization of a [`SaddleSystem`].
pub struct Factorization {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

/// One solved implicit step, scattered back to full velocity numbering.
#[derive(Debug, Clone)]
pub struct StepSolution {
    /// Velocity coefficients (constrained DOFs are exactly zero).
    pub u: Vec<f64>,
    /// Pressure coefficients (zero mean enforced by the multiplier row).
    pub p: Vec<f64>,
    /// The gauge multiplier (zero up to roundoff for compatible data).
    pub lambda: f64,
    /// `||S x - b||_inf / ||b||_inf` of the solved system.
    pub rel_residual: f64,
}

/// Assembles the reduced saddle-point system from the global operators.
pub fn build_system(
    spaces: &MixedSpaces,
    mass: &SparseOperator,
    stiffness: &SparseOperator,
    divergence: &SparseOperator,
    pressure_mass: &SparseOperator,
    nu: f64,
    k: f64,
) -> Result<SaddleSystem> {
    if !(k > 0.0) || !(nu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "viscosity and step size must be positive (nu={nu}, k={k})"
        )));
    }
    if mass.nrows() != spaces.n_vel
        || stiffness.nrows() != spaces.n_vel
        || divergence.ncols() != spaces.n_vel
        || divergence.nrows() != spaces.n_press
    {
        return Err(Error::Incompatible(
            "operator dimensions do not match the spaces".into(),
        ));
    }

    let mut free_of_full = Vec::with_capacity(spaces.n_vel - spaces.n_dirichlet);
    let mut full_to_free = vec![usize::MAX; spaces.n_vel];
    for d in 0..spaces.n_vel {
        if !spaces.vel_dirichlet[d] {
            full_to_free[d] = free_of_full.len();
            free_of_full.push(d);
        }
    }
    let n_free = free_of_full.len();
    let n_press = spaces.n_press;
    let dim = n_free + n_press + 1;

    let c = pressure_mass.apply(&vec![1.0; n_press]);

    let mut raw = Vec::new();
    for (i, j, v) in mass.triplets() {
        let (fi, fj) = (full_to_free[*i], full_to_free[*j]);
        if fi != usize::MAX && fj != usize::MAX {
            raw.push((fi, fj, *v));
        }
    }
    for (i, j, v) in stiffness.triplets() {
        let (fi, fj) = (full_to_free[*i], full_to_free[*j]);
        if fi != usize::MAX && fj != usize::MAX {
            raw.push((fi, fj, nu * k * *v));
        }
    }
    for (q, j, v) in divergence.triplets() {
        let fj = full_to_free[*j];
        if fj != usize::MAX {
            raw.push((fj, n_free + q, -k * *v));
            raw.push((n_free + q, fj, *v));
        }
    }
    for (q, cq) in c.iter().enumerate() {
        raw.push((n_free + q, dim - 1, *cq));
        raw.push((dim - 1, n_free + q, *cq));
    }

    Ok(SaddleSystem {
        dim,
        n_free,
        n_press,
        nu,
        k,
        free_of_full,
        full_to_free,
        c,
        op: SparseOperator::from_triplets(dim, dim, raw),
    })
}

impl SaddleSystem {
    /// The assembled operator (for diagnostics and tests).
    pub fn operator(&self) -> &SparseOperator {
        &self.op
    }

    /// Sparse LU factorization, reusable across steps and samples.
    pub fn factorize(&self) -> Result<Factorization> {
        let triplets: Vec<Triplet<usize, usize, f64>> = self
            .op
            .triplets()
            .iter()
            .map(|(r, c, v)| Triplet::new(*r, *c, *v))
            .collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(self.dim, self.dim, &triplets)
            .map_err(|e| Error::Singular(format!("could not build sparse matrix: {e:?}")))?;
        let lu = mat
            .sp_lu()
            .map_err(|e| Error::Singular(format!("sparse LU factorization failed: {e:?}")))?;
        Ok(Factorization { lu })
    }

    /// Solves one step given the momentum right-hand side in *full* velocity
    /// numbering (entries at constrained DOFs are ignored; the continuity
    /// and gauge rows have zero right-hand side).
    pub fn solve_step(&self, fact: &Factorization, rhs_momentum: &[f64]) -> Result<StepSolution> {
        if rhs_momentum.len() != self.full_to_free.len() {
            return Err(Error::Incompatible(format!(
                "momentum right-hand side has length {}, expected {}",
                rhs_momentum.len(),
                self.full_to_free.len()
            )));
        }
        let mut b = vec![0.0; self.dim];
        for (fi, full) in self.free_of_full.iter().enumerate() {
            b[fi] = rhs_momentum[*full];
        }
        let b_mat = Mat::from_fn(self.dim, 1, |i, _| b[i]);
        let x_mat = fact.lu.solve(&b_mat);
        let x: Vec<f64> = (0..self.dim).map(|i| x_mat[(i, 0)]).collect();

        // Residual in the solved (reduced) system.
        let sx = self.op.apply(&x);
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..self.dim {
            num = num.max((sx[i] - b[i]).abs());
            den = den.max(b[i].abs());
        }
        let rel_residual = if den > 0.0 { num / den } else { num };

        let mut u = vec![0.0; self.full_to_free.len()];
        for (fi, full) in self.free_of_full.iter().enumerate() {
            u[*full] = x[fi];
        }
        let p = x[self.n_free..self.n_free + self.n_press].to_vec();
        let lambda = x[self.dim - 1];
        Ok(StepSolution {
            u,
            p,
            lambda,
            rel_residual,
        })
    }

    /// The pressure mean functional `c^T p` (exactly the gauge row).
    pub fn pressure_mean(&self, p: &[f64]) -> f64 {
        self.c.iter().zip(p).map(|(ci, pi)| ci * pi).sum()
    }
}
