//! Mixed finite element spaces on a [`Mesh`]: continuous piecewise-linear
//! functions enriched with one cubic bubble per triangle for each velocity
//! component, and continuous piecewise-linear pressure.
//!
//! Scalar basis on a triangle with barycentric coordinates `(l0, l1, l2)`:
//! the three vertex functions `l_i` plus the bubble `27*l0*l1*l2`
//! (normalized to 1 at the centroid, vanishing on all edges).

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Degrees-of-freedom bookkeeping for the velocity/pressure pair.
///
/// Velocity DOFs are component-major: component `c` occupies the index range
/// `c*n_scalar..(c+1)*n_scalar`, inside which vertex DOFs come first (node
/// order) followed by one bubble DOF per triangle (triangle order). Pressure
/// DOFs coincide with node indices.
#[derive(Debug, Clone)]
pub struct MixedSpaces {
    pub mesh: Mesh,
    /// Scalar-space dimension per velocity component: nodes + triangles.
    pub n_scalar: usize,
    /// Total velocity DOFs: `2 * n_scalar`.
    pub n_vel: usize,
    /// Pressure DOFs: one per node.
    pub n_press: usize,
    /// `vel_dirichlet[d]` is true iff velocity DOF `d` is fixed to zero by
    /// the homogeneous boundary condition (vertex DOFs on boundary nodes;
    /// bubbles are interior by construction and never constrained).
    pub vel_dirichlet: Vec<bool>,
    pub n_dirichlet: usize,
}

impl MixedSpaces {
    pub fn new(mesh: Mesh) -> MixedSpaces {
        let n_nodes = mesh.n_nodes();
        let n_scalar = n_nodes + mesh.n_triangles();
        let n_vel = 2 * n_scalar;
        let mut vel_dirichlet = vec![false; n_vel];
        let mut n_dirichlet = 0;
        for comp in 0..2 {
            for (node, on_boundary) in mesh.boundary.iter().enumerate() {
                if *on_boundary {
                    vel_dirichlet[comp * n_scalar + node] = true;
                    n_dirichlet += 1;
                }
            }
        }
        MixedSpaces {
            n_press: n_nodes,
            mesh,
            n_scalar,
            n_vel,
            vel_dirichlet,
            n_dirichlet,
        }
    }

    /// Global velocity DOF of vertex `node`, component `comp`.
    pub fn vertex_dof(&self, comp: usize, node: usize) -> usize {
        comp * self.n_scalar + node
    }

    /// Global velocity DOF of the bubble on triangle `tri`, component `comp`.
    pub fn bubble_dof(&self, comp: usize, tri: usize) -> usize {
        comp * self.n_scalar + self.mesh.n_nodes() + tri
    }

    /// Global velocity DOFs of the four local scalar basis functions
    /// (three vertices then the bubble) on `tri` for component `comp`.
    pub fn local_vel_dofs(&self, comp: usize, tri: usize) -> [usize; 4] {
        let [a, b, c] = self.mesh.triangles[tri];
        [
            self.vertex_dof(comp, a),
            self.vertex_dof(comp, b),
            self.vertex_dof(comp, c),
            self.bubble_dof(comp, tri),
        ]
    }

    /// Values and cartesian gradients of the four local scalar basis
    /// functions on triangle `tri` at a barycentric point.
    pub fn scalar_basis(&self, tri: usize, bary: [f64; 3]) -> ([f64; 4], [[f64; 2]; 4]) {
        let [l0, l1, l2] = bary;
        let g = self.mesh.barycentric_gradients(tri);
        let values = [l0, l1, l2, 27.0 * l0 * l1 * l2];
        let bubble_grad = [
            27.0 * (l1 * l2 * g[0][0] + l0 * l2 * g[1][0] + l0 * l1 * g[2][0]),
            27.0 * (l1 * l2 * g[0][1] + l0 * l2 * g[1][1] + l0 * l1 * g[2][1]),
        ];
        (values, [g[0], g[1], g[2], bubble_grad])
    }

    /// Evaluates a velocity coefficient vector at a barycentric point of
    /// triangle `tri`.
    pub fn eval_velocity(&self, coeffs: &[f64], tri: usize, bary: [f64; 3]) -> [f64; 2] {
        let (values, _) = self.scalar_basis(tri, bary);
        let mut out = [0.0; 2];
        for comp in 0..2 {
            let dofs = self.local_vel_dofs(comp, tri);
            out[comp] = (0..4).map(|i| coeffs[dofs[i]] * values[i]).sum();
        }
        out
    }

    /// Evaluates the velocity Jacobian `out[comp][d] = d u_comp / d x_d`.
    pub fn eval_velocity_gradient(
        &self,
        coeffs: &[f64],
        tri: usize,
        bary: [f64; 3],
    ) -> [[f64; 2]; 2] {
        let (_, grads) = self.scalar_basis(tri, bary);
        let mut out = [[0.0; 2]; 2];
        for comp in 0..2 {
            let dofs = self.local_vel_dofs(comp, tri);
            for i in 0..4 {
                let c = coeffs[dofs[i]];
                out[comp][0] += c * grads[i][0];
                out[comp][1] += c * grads[i][1];
            }
        }
        out
    }

    /// Evaluates a pressure coefficient vector (piecewise linear) at a
    /// barycentric point of triangle `tri`.
    pub fn eval_pressure(&self, coeffs: &[f64], tri: usize, bary: [f64; 3]) -> f64 {
        let [a, b, c] = self.mesh.triangles[tri];
        bary[0] * coeffs[a] + bary[1] * coeffs[b] + bary[2] * coeffs[c]
    }
}

/// Interpolates a velocity field: vertex DOFs take the field values at the
/// nodes, and each bubble DOF is chosen so the interpolant matches the field
/// at the triangle centroid.
pub fn interpolate_velocity<F>(spaces: &MixedSpaces, f: F) -> Vec<f64>
where
    F: Fn(f64, f64) -> [f64; 2],
{
    let mesh = &spaces.mesh;
    let mut coeffs = vec![0.0; spaces.n_vel];
    for (node, p) in mesh.nodes.iter().enumerate() {
        let v = f(p[0], p[1]);
        for comp in 0..2 {
            coeffs[spaces.vertex_dof(comp, node)] = v[comp];
        }
    }
    for tri in 0..mesh.n_triangles() {
        let c = mesh.centroid(tri);
        let v = f(c[0], c[1]);
        let [a, b, cn] = mesh.triangles[tri];
        for comp in 0..2 {
            let vertex_mean = (coeffs[spaces.vertex_dof(comp, a)]
                + coeffs[spaces.vertex_dof(comp, b)]
                + coeffs[spaces.vertex_dof(comp, cn)])
                / 3.0;
            coeffs[spaces.bubble_dof(comp, tri)] = v[comp] - vertex_mean;
        }
    }
    coeffs
}

/// A symmetric-positive quadrature rule on the reference triangle.
///
/// Points are stored in barycentric coordinates and weights are normalized to
/// sum to 1, so `integral over K = area(K) * sum_q w_q * f(x_q)`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub degree: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Integrates `f(point, barycentric)` over triangle `tri` of `mesh`.
    pub fn integrate<F>(&self, mesh: &Mesh, tri: usize, mut f: F) -> f64
    where
        F: FnMut([f64; 2], [f64; 3]) -> f64,
    {
        let area = mesh.area(tri);
        let mut sum = 0.0;
        for (bary, w) in self.points.iter().zip(&self.weights) {
            sum += w * f(mesh.point(tri, *bary), *bary);
        }
        area * sum
    }
}

/// Returns a rule exact for all bivariate polynomials up to `degree`.
/// Supported degrees are 1..=6; anything else is an error.
pub fn quadrature(degree: usize) -> Result<QuadratureRule> {
    if !(1..=6).contains(&degree) {
        return Err(Error::InvalidParameter(format!(
            "quadrature degree {degree} unsupported (expected 1..=6)"
        )));
    }
    Ok(conical_rule(degree))
}

/// Internal rule builder without the public degree cap. Used for the
/// high-order (degree 10) rules backing error measurement against smooth
/// reference fields.
pub(crate) fn quadrature_any(degree: usize) -> QuadratureRule {
    conical_rule(degree)
}

/// Conical product rule: map the unit square onto the reference triangle by
/// `x = s`, `y = t*(1-s)` (Jacobian `1-s`) and use Gauss-Legendre in both
/// directions, folding the Jacobian into the weights. With `m` points per
/// direction the rule is exact for total degree `2m-2`; all weights are
/// positive by construction.
fn conical_rule(degree: usize) -> QuadratureRule {
    let m = (degree + 3) / 2; // 2m-1 >= degree+1 covers the Jacobian factor
    let (xs, ws) = gauss_legendre_unit(m);
    let mut points = Vec::with_capacity(m * m);
    let mut weights = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            let x = xs[i];
            let y = xs[j] * (1.0 - xs[i]);
            points.push([1.0 - x - y, x, y]);
            // Raw weights integrate over the reference triangle (area 1/2);
            // the factor 2 normalizes the sum to 1.
            weights.push(2.0 * ws[i] * ws[j] * (1.0 - xs[i]));
        }
    }
    QuadratureRule {
        degree,
        points,
        weights,
    }
}

/// Gauss-Legendre nodes and weights on [0, 1], by Newton iteration on the
/// Legendre recurrence.
fn gauss_legendre_unit(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; m];
    let mut ws = vec![0.0; m];
    for i in 0..m {
        // Standard initial guess on [-1, 1].
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(m, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(m, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Map [-1,1] -> [0,1]. The cosine guesses descend, so reverse order
        // to keep nodes ascending (cosmetic; weights pair correctly anyway).
        xs[m - 1 - i] = 0.5 * (x + 1.0);
        ws[m - 1 - i] = 0.5 * w;
    }
    (xs, ws)
}

/// Value and derivative of the Legendre polynomial `P_m` at `x`.
fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if m == 0 {
        return (1.0, 0.0);
    }
    let dp = (m as f64) * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
