//! Error measurement: discrete norms, path errors between trajectories at
//! different time resolutions, cross-mesh errors between nested meshes,
//! errors against the closed-form reference fields, Monte Carlo aggregation,
//! and convergence orders.

use crate::assembly::SparseOperator;
use crate::error::{Error, Result};
use crate::femspace::{quadrature, quadrature_any, MixedSpaces};
use crate::manufactured::{exact_pressure, exact_velocity, exact_velocity_gradient};
use crate::stepper::Trajectory;

/// `sqrt(c^T M c)` — the L2 norm of the field with coefficients `c` when `M`
/// is the matching mass matrix.
pub fn l2_norm(coeffs: &[f64], mass: &SparseOperator) -> f64 {
    mass.quadratic(coeffs, coeffs).max(0.0).sqrt()
}

/// Full H1 norm: `sqrt(c^T M c + c^T A c)`.
pub fn h1_norm(coeffs: &[f64], mass: &SparseOperator, stiffness: &SparseOperator) -> f64 {
    (mass.quadratic(coeffs, coeffs) + stiffness.quadratic(coeffs, coeffs))
        .max(0.0)
        .sqrt()
}

/// The three path-error functionals of one sample:
/// `max_n ||du||_L2`, `(k sum_n ||du||_H1^2)^(1/2)`, and
/// `k sum_n ||dp||_L2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleErrors {
    pub linf_l2: f64,
    pub l2_h1: f64,
    pub press_l2: f64,
}

/// Path errors between a trajectory and a finer-in-time reference on the
/// *same mesh*. `reference` must have `stride` times as many steps; both
/// velocities and pressures are compared at the shared time nodes, so the
/// pressure at coarse step `n` is matched with the reference pressure of
/// refined step `stride * n`.
///
/// Comparing instead against the mean of the `stride` sub-step reference
/// pressures looks natural (it turns the comparison into one between
/// increments of the time-averaged pressure), but it cancels most of the
/// O(k) head of the pressure error and leaves the slowly decaying noise
/// response, stalling the observed convergence order near one half.
pub fn path_errors(
    mass: &SparseOperator,
    stiffness: &SparseOperator,
    press_mass: &SparseOperator,
    traj: &Trajectory,
    reference: &Trajectory,
    stride: usize,
) -> Result<SampleErrors> {
    if stride == 0 || reference.steps != stride * traj.steps {
        return Err(Error::Incompatible(format!(
            "reference with {} steps is not a stride-{stride} refinement of {} steps",
            reference.steps, traj.steps
        )));
    }
    if traj.u[0].len() != reference.u[0].len() {
        return Err(Error::Incompatible(
            "trajectories live on different meshes".into(),
        ));
    }
    let k = traj.k;
    let mut linf_l2: f64 = 0.0;
    let mut h1_sq_sum = 0.0;
    let mut press_sum = 0.0;
    for n in 1..=traj.steps {
        let du: Vec<f64> = traj.u[n]
            .iter()
            .zip(&reference.u[stride * n])
            .map(|(a, b)| a - b)
            .collect();
        let m_du = mass.quadratic(&du, &du).max(0.0);
        let a_du = stiffness.quadratic(&du, &du).max(0.0);
        linf_l2 = linf_l2.max(m_du.sqrt());
        h1_sq_sum += m_du + a_du;

        let dp: Vec<f64> = traj.p[n - 1]
            .iter()
            .zip(&reference.p[stride * n - 1])
            .map(|(a, b)| a - b)
            .collect();
        press_sum += l2_norm(&dp, press_mass);
    }
    Ok(SampleErrors {
        linf_l2,
        l2_h1: (k * h1_sq_sum).sqrt(),
        press_l2: k * press_sum,
    })
}

/// `log2(e_coarse / e_fine)` — the observed order between two resolutions
/// that differ by a factor two. Errors must be positive.
pub fn convergence_order(e_coarse: f64, e_fine: f64) -> Result<f64> {
    if !(e_coarse > 0.0) || !(e_fine > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "convergence order needs positive errors, got {e_coarse} and {e_fine}"
        )));
    }
    Ok((e_coarse / e_fine).log2())
}

/// Least-squares slope `q` of `ln(e) ~ q ln(r) + const` over a set of
/// (resolution, error) pairs — the observed order of an `e ~ C r^q` fit.
pub fn fit_order(resolutions: &[f64], errors: &[f64]) -> Result<f64> {
    if resolutions.len() != errors.len() || resolutions.len() < 2 {
        return Err(Error::InvalidParameter(
            "order fit needs at least two matching points".into(),
        ));
    }
    if resolutions.iter().chain(errors).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter(
            "order fit needs positive resolutions and errors".into(),
        ));
    }
    let xs: Vec<f64> = resolutions.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    Ok(sxy / sxx)
}

/// A Monte Carlo aggregate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub value: f64,
    pub se: f64,
}

/// Root-mean-square over samples, `sqrt(E[x^2])`, with the delta-method
/// standard error `SE(mean of squares) / (2 sqrt(mean of squares))`.
pub fn mc_rms(samples: &[f64]) -> Aggregate {
    let j = samples.len() as f64;
    if samples.is_empty() {
        return Aggregate {
            value: 0.0,
            se: 0.0,
        };
    }
    let mean_sq = samples.iter().map(|x| x * x).sum::<f64>() / j;
    let value = mean_sq.sqrt();
    if samples.len() < 2 || value == 0.0 {
        return Aggregate { value, se: 0.0 };
    }
    let var_sq = samples
        .iter()
        .map(|x| (x * x - mean_sq) * (x * x - mean_sq))
        .sum::<f64>()
        / (j - 1.0);
    Aggregate {
        value,
        se: (var_sq / j).sqrt() / (2.0 * value),
    }
}

/// Plain sample mean with its standard error.
pub fn mc_mean(samples: &[f64]) -> Aggregate {
    let j = samples.len() as f64;
    if samples.is_empty() {
        return Aggregate {
            value: 0.0,
            se: 0.0,
        };
    }
    let mean = samples.iter().sum::<f64>() / j;
    if samples.len() < 2 {
        return Aggregate {
            value: mean,
            se: 0.0,
        };
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (j - 1.0);
    Aggregate {
        value: mean,
        se: (var / j).sqrt(),
    }
}

/// Precomputed quadrature tables for integrating differences of fields
/// living on a mesh and its uniform refinement (`fine.n == 2 * coarse.n`,
/// same diagonal direction, so every fine triangle lies inside exactly one
/// coarse triangle and all integrands stay piecewise polynomial).
pub struct MeshPairMap {
    entries: Vec<PairTriangle>,
}

struct PairTriangle {
    fine_dofs: [[usize; 4]; 2],
    coarse_dofs: [[usize; 4]; 2],
    fine_press: [usize; 3],
    coarse_press: [usize; 3],
    /// Per quadrature point: scaled weight, fine basis, coarse basis.
    points: Vec<PairPoint>,
}

struct PairPoint {
    w_area: f64,
    fine_vals: [f64; 4],
    fine_grads: [[f64; 2]; 4],
    fine_bary: [f64; 3],
    coarse_vals: [f64; 4],
    coarse_grads: [[f64; 2]; 4],
    coarse_bary: [f64; 3],
}

impl MeshPairMap {
    pub fn build(coarse: &MixedSpaces, fine: &MixedSpaces) -> Result<MeshPairMap> {
        let nc = coarse.mesh.n;
        let nf = fine.mesh.n;
        if nf != 2 * nc {
            return Err(Error::Incompatible(format!(
                "pair map needs a one-level refinement, got n={nc} and n={nf}"
            )));
        }
        let rule = quadrature(6).expect("supported degree");
        let mut entries = Vec::with_capacity(fine.mesh.n_triangles());
        for ft in 0..fine.mesh.n_triangles() {
            let cell = ft / 2;
            let upper = ft % 2 == 1;
            let (iy, ix) = (cell / nf, cell % nf);
            let coarse_cell = (iy / 2) * nc + ix / 2;
            // Which side of the coarse diagonal the fine triangle lies on:
            // right-bottom quadrant -> lower, left-top -> upper, diagonal
            // quadrants keep the fine orientation.
            let coarse_upper = match (ix % 2, iy % 2) {
                (1, 0) => false,
                (0, 1) => true,
                _ => upper,
            };
            let ct = 2 * coarse_cell + coarse_upper as usize;

            let mut points = Vec::with_capacity(rule.points.len());
            let area = fine.mesh.area(ft);
            for (bary, w) in rule.points.iter().zip(&rule.weights) {
                let p = fine.mesh.point(ft, *bary);
                let cb = barycentric_in(&coarse.mesh, ct, p)?;
                let (fv, fg) = fine.scalar_basis(ft, *bary);
                let (cv, cg) = coarse.scalar_basis(ct, cb);
                points.push(PairPoint {
                    w_area: w * area,
                    fine_vals: fv,
                    fine_grads: fg,
                    fine_bary: *bary,
                    coarse_vals: cv,
                    coarse_grads: cg,
                    coarse_bary: cb,
                });
            }
            entries.push(PairTriangle {
                fine_dofs: [fine.local_vel_dofs(0, ft), fine.local_vel_dofs(1, ft)],
                coarse_dofs: [coarse.local_vel_dofs(0, ct), coarse.local_vel_dofs(1, ct)],
                fine_press: fine.mesh.triangles[ft],
                coarse_press: coarse.mesh.triangles[ct],
                points,
            });
        }
        Ok(MeshPairMap { entries })
    }

    /// Path errors between same-time-grid trajectories on the two meshes,
    /// integrated exactly over the fine mesh.
    pub fn errors(&self, coarse_traj: &Trajectory, fine_traj: &Trajectory) -> Result<SampleErrors> {
        if coarse_traj.steps != fine_traj.steps {
            return Err(Error::Incompatible(
                "cross-mesh errors need matching time grids".into(),
            ));
        }
        let k = coarse_traj.k;
        let mut linf_l2: f64 = 0.0;
        let mut h1_sq_sum = 0.0;
        let mut press_sum = 0.0;
        for n in 1..=coarse_traj.steps {
            let uc = &coarse_traj.u[n];
            let uf = &fine_traj.u[n];
            let pc = &coarse_traj.p[n - 1];
            let pf = &fine_traj.p[n - 1];
            let mut l2_sq = 0.0;
            let mut h1_sq = 0.0;
            let mut p_sq = 0.0;
            for tri in &self.entries {
                for pt in &tri.points {
                    let mut val_sq = 0.0;
                    let mut grad_sq = 0.0;
                    for comp in 0..2 {
                        let mut dv = 0.0;
                        let mut dgx = 0.0;
                        let mut dgy = 0.0;
                        for i in 0..4 {
                            let cc = uc[tri.coarse_dofs[comp][i]];
                            let cf = uf[tri.fine_dofs[comp][i]];
                            dv += cc * pt.coarse_vals[i] - cf * pt.fine_vals[i];
                            dgx += cc * pt.coarse_grads[i][0] - cf * pt.fine_grads[i][0];
                            dgy += cc * pt.coarse_grads[i][1] - cf * pt.fine_grads[i][1];
                        }
                        val_sq += dv * dv;
                        grad_sq += dgx * dgx + dgy * dgy;
                    }
                    let mut dp = 0.0;
                    for i in 0..3 {
                        dp += pc[tri.coarse_press[i]] * pt.coarse_bary[i]
                            - pf[tri.fine_press[i]] * pt.fine_bary[i];
                    }
                    l2_sq += pt.w_area * val_sq;
                    h1_sq += pt.w_area * (val_sq + grad_sq);
                    p_sq += pt.w_area * dp * dp;
                }
            }
            linf_l2 = linf_l2.max(l2_sq.max(0.0).sqrt());
            h1_sq_sum += h1_sq;
            press_sum += p_sq.max(0.0).sqrt();
        }
        Ok(SampleErrors {
            linf_l2,
            l2_h1: (k * h1_sq_sum).sqrt(),
            press_l2: k * press_sum,
        })
    }
}

/// Barycentric coordinates of a cartesian point within triangle `t`.
fn barycentric_in(mesh: &crate::mesh::Mesh, t: usize, p: [f64; 2]) -> Result<[f64; 3]> {
    let [v0, v1, v2] = mesh.vertices(t);
    let det = (v1[0] - v0[0]) * (v2[1] - v0[1]) - (v2[0] - v0[0]) * (v1[1] - v0[1]);
    let l1 = ((p[0] - v0[0]) * (v2[1] - v0[1]) - (v2[0] - v0[0]) * (p[1] - v0[1])) / det;
    let l2 = ((v1[0] - v0[0]) * (p[1] - v0[1]) - (p[0] - v0[0]) * (v1[1] - v0[1])) / det;
    let l0 = 1.0 - l1 - l2;
    let eps = 1e-12;
    if l0 < -eps || l1 < -eps || l2 < -eps {
        return Err(Error::Incompatible(format!(
            "point ({}, {}) is outside triangle {t}",
            p[0], p[1]
        )));
    }
    Ok([l0, l1, l2])
}

/// Per-step distances of a trajectory from the closed-form reference fields
/// of the manufactured problem, measured by high-order (degree 10)
/// quadrature. The reference is time-separable (`sin(t)` times a fixed
/// spatial profile), so the profile is tabulated once per mesh.
pub fn errors_vs_reference(spaces: &MixedSpaces, traj: &Trajectory) -> SampleErrors {
    let rule = quadrature_any(10);
    let mesh = &spaces.mesh;
    // Tables at t such that sin(t) = 1; each step scales them by sin(t_n).
    struct Pt {
        w_area: f64,
        vals: [f64; 4],
        grads: [[f64; 2]; 4],
        bary: [f64; 3],
        u_star: [f64; 2],
        ju_star: [[f64; 2]; 2],
        p_star: f64,
    }
    let t_unit = std::f64::consts::FRAC_PI_2; // sin = 1
    let mut table: Vec<(usize, Vec<Pt>)> = Vec::with_capacity(mesh.n_triangles());
    for tri in 0..mesh.n_triangles() {
        let area = mesh.area(tri);
        let mut pts = Vec::with_capacity(rule.points.len());
        for (bary, w) in rule.points.iter().zip(&rule.weights) {
            let p = mesh.point(tri, *bary);
            let (vals, grads) = spaces.scalar_basis(tri, *bary);
            pts.push(Pt {
                w_area: w * area,
                vals,
                grads,
                bary: *bary,
                u_star: exact_velocity(t_unit, p[0], p[1]),
                ju_star: exact_velocity_gradient(t_unit, p[0], p[1]),
                p_star: exact_pressure(t_unit, p[0], p[1]),
            });
        }
        table.push((tri, pts));
    }

    let k = traj.k;
    let mut linf_l2: f64 = 0.0;
    let mut h1_sq_sum = 0.0;
    let mut press_sum = 0.0;
    for n in 1..=traj.steps {
        let st = ((n as f64) * k).sin();
        let u = &traj.u[n];
        let p = &traj.p[n - 1];
        let mut l2_sq = 0.0;
        let mut h1_sq = 0.0;
        let mut p_sq = 0.0;
        for (tri, pts) in &table {
            let dofs = [
                spaces.local_vel_dofs(0, *tri),
                spaces.local_vel_dofs(1, *tri),
            ];
            let press_nodes = mesh.triangles[*tri];
            for pt in pts {
                let mut val_sq = 0.0;
                let mut grad_sq = 0.0;
                for comp in 0..2 {
                    let mut v = -st * pt.u_star[comp];
                    let mut gx = -st * pt.ju_star[comp][0];
                    let mut gy = -st * pt.ju_star[comp][1];
                    for i in 0..4 {
                        let c = u[dofs[comp][i]];
                        v += c * pt.vals[i];
                        gx += c * pt.grads[i][0];
                        gy += c * pt.grads[i][1];
                    }
                    val_sq += v * v;
                    grad_sq += gx * gx + gy * gy;
                }
                let mut dp = -st * pt.p_star;
                for i in 0..3 {
                    dp += p[press_nodes[i]] * pt.bary[i];
                }
                l2_sq += pt.w_area * val_sq;
                h1_sq += pt.w_area * (val_sq + grad_sq);
                p_sq += pt.w_area * dp * dp;
            }
        }
        linf_l2 = linf_l2.max(l2_sq.max(0.0).sqrt());
        h1_sq_sum += h1_sq;
        press_sum += p_sq.max(0.0).sqrt();
    }
    SampleErrors {
        linf_l2,
        l2_h1: (k * h1_sq_sum).sqrt(),
        press_l2: k * press_sum,
    }
}
