//! The manufactured study problem on the unit square.
//!
//! The load below is constructed so that, with unit viscosity and without
//! noise, the velocity/pressure pair
//!
//! ```text
//! u1(t,x,y) =  pi sin(t) sin(2 pi y) sin^2(pi x)
//! u2(t,x,y) = -pi sin(t) sin(2 pi x) sin^2(pi y)
//! p(t,x,y)  =  sin(t) cos(pi x) sin(pi y)
//! ```
//!
//! solves the time-dependent Stokes system: `f = du/dt - laplace(u) +
//! grad(p)`. The field is divergence-free, vanishes on the boundary and at
//! `t = 0`, and the pressure has zero mean over the square — exactly the
//! setting of the convergence studies.

use std::f64::consts::PI;

/// The closed-form load driving every study run.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForcingSpec;

impl ForcingSpec {
    /// Load components at time `t` and position `(x, y)`.
    pub fn eval(&self, t: f64, x: f64, y: f64) -> [f64; 2] {
        let (st, ct) = t.sin_cos();
        let s2x = (2.0 * PI * x).sin();
        let s2y = (2.0 * PI * y).sin();
        let c2x = (2.0 * PI * x).cos();
        let c2y = (2.0 * PI * y).cos();
        let sx = (PI * x).sin();
        let sy = (PI * y).sin();
        let cx = (PI * x).cos();
        let cy = (PI * y).cos();
        let pi3 = PI * PI * PI;
        let f1 =
            PI * ct * s2y * sx * sx - 2.0 * pi3 * st * s2y * (2.0 * c2x - 1.0) - PI * st * sx * sy;
        let f2 =
            -PI * ct * s2x * sy * sy - 2.0 * pi3 * st * s2x * (1.0 - 2.0 * c2y) + PI * st * cx * cy;
        [f1, f2]
    }
}

/// Exact velocity of the manufactured problem.
pub fn exact_velocity(t: f64, x: f64, y: f64) -> [f64; 2] {
    let st = t.sin();
    let sx = (PI * x).sin();
    let sy = (PI * y).sin();
    [
        PI * st * (2.0 * PI * y).sin() * sx * sx,
        -PI * st * (2.0 * PI * x).sin() * sy * sy,
    ]
}

/// Exact velocity Jacobian, `out[comp][d] = d u_comp / d x_d`.
pub fn exact_velocity_gradient(t: f64, x: f64, y: f64) -> [[f64; 2]; 2] {
    let st = t.sin();
    let pi2 = PI * PI;
    let s2x = (2.0 * PI * x).sin();
    let s2y = (2.0 * PI * y).sin();
    let c2x = (2.0 * PI * x).cos();
    let c2y = (2.0 * PI * y).cos();
    let sx = (PI * x).sin();
    let sy = (PI * y).sin();
    [
        [pi2 * st * s2y * s2x, 2.0 * pi2 * st * c2y * sx * sx],
        [-2.0 * pi2 * st * c2x * sy * sy, -pi2 * st * s2x * s2y],
    ]
}

/// Exact pressure of the manufactured problem (zero mean on the square).
pub fn exact_pressure(t: f64, x: f64, y: f64) -> f64 {
    t.sin() * (PI * x).cos() * (PI * y).sin()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_point_values() {
        let f = ForcingSpec;
        // At t = 0 only the cos(t)-weighted terms are active.
        let v = f.eval(0.0, 0.5, 0.25);
        assert!((v[0] - PI).abs() <= 1e-14);
        let w = f.eval(0.0, 0.25, 0.5);
        assert!((w[1] + PI).abs() <= 1e-14);
    }

    #[test]
    fn velocity_vanishes_at_start_and_on_boundary() {
        for (x, y) in [(0.0, 0.3), (1.0, 0.77), (0.41, 0.0), (0.9, 1.0)] {
            let v = exact_velocity(0.8, x, y);
            assert!(v[0].abs() <= 1e-13 && v[1].abs() <= 1e-13, "({x},{y})");
        }
        let v0 = exact_velocity(0.0, 0.3, 0.6);
        assert_eq!(v0, [0.0, -0.0]);
    }

    #[test]
    fn velocity_is_divergence_free() {
        for (x, y) in [(0.21, 0.17), (0.5, 0.5), (0.83, 0.29), (0.07, 0.93)] {
            let j = exact_velocity_gradient(1.3, x, y);
            assert!((j[0][0] + j[1][1]).abs() <= 1e-12, "div at ({x},{y})");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t = 0.7;
        let eps = 1e-6;
        for (x, y) in [(0.31, 0.44), (0.69, 0.12)] {
            let j = exact_velocity_gradient(t, x, y);
            for comp in 0..2 {
                let dx = (exact_velocity(t, x + eps, y)[comp]
                    - exact_velocity(t, x - eps, y)[comp])
                    / (2.0 * eps);
                let dy = (exact_velocity(t, x, y + eps)[comp]
                    - exact_velocity(t, x, y - eps)[comp])
                    / (2.0 * eps);
                assert!((j[comp][0] - dx).abs() <= 1e-7);
                assert!((j[comp][1] - dy).abs() <= 1e-7);
            }
        }
    }

    #[test]
    fn load_is_the_stokes_residual_of_the_exact_fields() {
        // f = du/dt - laplace(u) + grad(p), checked by central differences.
        let f = ForcingSpec;
        let eps = 1e-5;
        for (t, x, y) in [(0.6, 0.37, 0.52), (1.0, 0.7, 0.21), (0.25, 0.15, 0.85)] {
            for comp in 0..2 {
                let dudt = (exact_velocity(t + eps, x, y)[comp]
                    - exact_velocity(t - eps, x, y)[comp])
                    / (2.0 * eps);
                let lap = (exact_velocity(t, x + eps, y)[comp]
                    + exact_velocity(t, x - eps, y)[comp]
                    + exact_velocity(t, x, y + eps)[comp]
                    + exact_velocity(t, x, y - eps)[comp]
                    - 4.0 * exact_velocity(t, x, y)[comp])
                    / (eps * eps);
                let gradp = if comp == 0 {
                    (exact_pressure(t, x + eps, y) - exact_pressure(t, x - eps, y)) / (2.0 * eps)
                } else {
                    (exact_pressure(t, x, y + eps) - exact_pressure(t, x, y - eps)) / (2.0 * eps)
                };
                let want = dudt - lap + gradp;
                let got = f.eval(t, x, y)[comp];
                assert!(
                    (got - want).abs() <= 2e-4 * want.abs().max(1.0),
                    "component {comp} at ({t},{x},{y}): {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn pressure_has_zero_mean() {
        // Midpoint sum over a fine grid; the integrand is smooth and the
        // exact mean is 0 by antisymmetry of cos(pi x) about x = 1/2.
        let n = 200;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = (i as f64 + 0.5) / n as f64;
                let y = (j as f64 + 0.5) / n as f64;
                total += exact_pressure(0.9, x, y);
            }
        }
        total /= (n * n) as f64;
        assert!(total.abs() <= 1e-12, "mean pressure {total}");
    }
}
