//! Global operator assembly: velocity mass and stiffness, the pressure/
//! velocity divergence coupling, pressure mass, load vectors, and the noise
//! right-hand side.
//!
//! All element integrals use the degree-6 rule, which integrates every
//! polynomial entry exactly (the worst case, bubble x bubble mass, has
//! degree 6).

use crate::error::{Error, Result};
use crate::femspace::{quadrature, MixedSpaces, QuadratureRule};
use crate::manufactured::ForcingSpec;
use crate::stochastic::{milstein_weight, NoiseModel};

/// A sparse matrix in canonical (sorted, deduplicated) triplet form with a
/// CSR view for products. Assembly accumulates element contributions in a
/// fixed deterministic order, so repeated assembly is bit-identical.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    nrows: usize,
    ncols: usize,
    triplets: Vec<(usize, usize, f64)>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOperator {
    /// Builds the canonical form from raw triplets. Duplicate coordinates
    /// are summed in their original push order (stable sort), which keeps
    /// the result deterministic and symmetric assemblies exactly symmetric.
    pub fn from_triplets(nrows: usize, ncols: usize, mut raw: Vec<(usize, usize, f64)>) -> Self {
        raw.sort_by_key(|(r, c, _)| (*r, *c));
        let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(raw.len());
        for (r, c, v) in raw {
            match triplets.last_mut() {
                Some((lr, lc, lv)) if *lr == r && *lc == c => *lv += v,
                _ => triplets.push((r, c, v)),
            }
        }
        let mut row_ptr = vec![0usize; nrows + 1];
        for (r, _, _) in &triplets {
            row_ptr[r + 1] += 1;
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = triplets.iter().map(|(_, c, _)| *c).collect();
        let vals = triplets.iter().map(|(_, _, v)| *v).collect();
        SparseOperator {
            nrows,
            ncols,
            triplets,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Canonical triplets, sorted by row then column.
    pub fn triplets(&self) -> &[(usize, usize, f64)] {
        &self.triplets
    }

    /// Matrix-vector product.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut out = vec![0.0; self.nrows];
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[idx] * x[self.col_idx[idx]];
            }
            out[r] = acc;
        }
        out
    }

    /// Transposed product `A^T x`.
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut out = vec![0.0; self.ncols];
        for r in 0..self.nrows {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[self.col_idx[idx]] += self.vals[idx] * x[r];
            }
        }
        out
    }

    /// Bilinear form `x^T A y`.
    pub fn quadratic(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        let mut total = 0.0;
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[idx] * y[self.col_idx[idx]];
            }
            total += x[r] * acc;
        }
        total
    }
}

fn assembly_rule() -> QuadratureRule {
    quadrature(6).expect("degree 6 is in the supported range")
}

/// Velocity mass matrix: `M[a,b] = integral phi_a . phi_b` (block diagonal
/// over the two components).
pub fn assemble_velocity_mass(spaces: &MixedSpaces) -> SparseOperator {
    assemble_velocity_bilinear(spaces, |vals, _grads, a, b| vals[a] * vals[b])
}

/// Velocity stiffness matrix: `A[a,b] = integral grad phi_a : grad phi_b`.
pub fn assemble_velocity_stiffness(spaces: &MixedSpaces) -> SparseOperator {
    assemble_velocity_bilinear(spaces, |_vals, grads, a, b| {
        grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]
    })
}

fn assemble_velocity_bilinear<F>(spaces: &MixedSpaces, term: F) -> SparseOperator
where
    F: Fn(&[f64; 4], &[[f64; 2]; 4], usize, usize) -> f64,
{
    let rule = assembly_rule();
    let mesh = &spaces.mesh;
    let mut raw = Vec::with_capacity(mesh.n_triangles() * 32);
    for tri in 0..mesh.n_triangles() {
        let area = mesh.area(tri);
        let mut elem = [[0.0; 4]; 4];
        for (bary, w) in rule.points.iter().zip(&rule.weights) {
            let (vals, grads) = spaces.scalar_basis(tri, *bary);
            for a in 0..4 {
                for b in 0..4 {
                    elem[a][b] += w * term(&vals, &grads, a, b);
                }
            }
        }
        for row in elem.iter_mut() {
            for v in row.iter_mut() {
                *v *= area;
            }
        }
        for comp in 0..2 {
            let dofs = spaces.local_vel_dofs(comp, tri);
            for a in 0..4 {
                for b in 0..4 {
                    raw.push((dofs[a], dofs[b], elem[a][b]));
                }
            }
        }
    }
    SparseOperator::from_triplets(spaces.n_vel, spaces.n_vel, raw)
}

/// Divergence coupling: `B[q, v] = integral psi_q * d(phi_v)/d(x_comp)` for
/// velocity DOF `v` of component `comp`. Rows are pressure DOFs.
pub fn assemble_divergence(spaces: &MixedSpaces) -> SparseOperator {
    let rule = assembly_rule();
    let mesh = &spaces.mesh;
    let mut raw = Vec::with_capacity(mesh.n_triangles() * 24);
    for tri in 0..mesh.n_triangles() {
        let area = mesh.area(tri);
        let press_nodes = mesh.triangles[tri];
        let mut elem = [[[0.0; 4]; 3]; 2]; // [comp][press local][vel local]
        for (bary, w) in rule.points.iter().zip(&rule.weights) {
            let (_, grads) = spaces.scalar_basis(tri, *bary);
            for (q, lq) in bary.iter().enumerate() {
                for b in 0..4 {
                    elem[0][q][b] += w * lq * grads[b][0];
                    elem[1][q][b] += w * lq * grads[b][1];
                }
            }
        }
        for comp in 0..2 {
            let dofs = spaces.local_vel_dofs(comp, tri);
            for q in 0..3 {
                for b in 0..4 {
                    raw.push((press_nodes[q], dofs[b], area * elem[comp][q][b]));
                }
            }
        }
    }
    SparseOperator::from_triplets(spaces.n_press, spaces.n_vel, raw)
}

/// Pressure mass matrix (piecewise-linear scalar mass), used for pressure
/// norms and for the mean-value functional `c = Mp * 1`.
pub fn assemble_pressure_mass(spaces: &MixedSpaces) -> SparseOperator {
    let rule = assembly_rule();
    let mesh = &spaces.mesh;
    let mut raw = Vec::with_capacity(mesh.n_triangles() * 9);
    for tri in 0..mesh.n_triangles() {
        let area = mesh.area(tri);
        let nodes = mesh.triangles[tri];
        let mut elem = [[0.0; 3]; 3];
        for (bary, w) in rule.points.iter().zip(&rule.weights) {
            for a in 0..3 {
                for b in 0..3 {
                    elem[a][b] += w * bary[a] * bary[b];
                }
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                raw.push((nodes[a], nodes[b], area * elem[a][b]));
            }
        }
    }
    SparseOperator::from_triplets(spaces.n_press, spaces.n_press, raw)
}

/// Load vector at time `t`: `L[v] = integral f_comp(t, x) * phi_v`.
pub fn assemble_load(spaces: &MixedSpaces, t: f64, forcing: &ForcingSpec) -> Vec<f64> {
    assemble_load_with_rule(spaces, t, forcing, &assembly_rule())
}

pub(crate) fn assemble_load_with_rule(
    spaces: &MixedSpaces,
    t: f64,
    forcing: &ForcingSpec,
    rule: &QuadratureRule,
) -> Vec<f64> {
    let mesh = &spaces.mesh;
    let mut out = vec![0.0; spaces.n_vel];
    for tri in 0..mesh.n_triangles() {
        let area = mesh.area(tri);
        let mut elem = [[0.0; 4]; 2];
        for (bary, w) in rule.points.iter().zip(&rule.weights) {
            let p = mesh.point(tri, *bary);
            let f = forcing.eval(t, p[0], p[1]);
            let (vals, _) = spaces.scalar_basis(tri, *bary);
            for b in 0..4 {
                elem[0][b] += w * f[0] * vals[b];
                elem[1][b] += w * f[1] * vals[b];
            }
        }
        for comp in 0..2 {
            let dofs = spaces.local_vel_dofs(comp, tri);
            for b in 0..4 {
                out[dofs[b]] += area * elem[comp][b];
            }
        }
    }
    out
}

/// Noise contribution to the momentum right-hand side over one step:
/// `M * ( dW * G(u) + ((dW)^2 - k)/2 * DG(u)G(u) )`.
pub fn noise_rhs(
    mass: &SparseOperator,
    model: &dyn NoiseModel,
    u: &[f64],
    dw: f64,
    k: f64,
) -> Result<Vec<f64>> {
    noise_rhs_weighted(mass, model, u, dw, milstein_weight(dw, k))
}

/// Same as [`noise_rhs`] with an explicit correction weight (0 recovers the
/// plain Euler-Maruyama noise term).
pub fn noise_rhs_weighted(
    mass: &SparseOperator,
    model: &dyn NoiseModel,
    u: &[f64],
    dw: f64,
    weight: f64,
) -> Result<Vec<f64>> {
    if u.len() != mass.ncols() {
        return Err(Error::Incompatible(format!(
            "velocity vector length {} does not match mass dimension {}",
            u.len(),
            mass.ncols()
        )));
    }
    let g = model.diffusion(u);
    let dgg = model.correction(u);
    if g.len() != u.len() || dgg.len() != u.len() {
        return Err(Error::Incompatible(
            "noise model returned fields of a different dimension".into(),
        ));
    }
    let combined: Vec<f64> = g
        .iter()
        .zip(&dgg)
        .map(|(gi, ci)| dw * gi + weight * ci)
        .collect();
    Ok(mass.apply(&combined))
}
