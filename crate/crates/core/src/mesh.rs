//! Uniform triangulations of the unit square.
//!
//! The square is split into an n-by-n grid of cells; each cell is cut along
//! its lower-left to upper-right diagonal into two counter-clockwise
//! triangles. Nodes are numbered row by row (y-major), so node `iy*(n+1)+ix`
//! sits at `(ix/n, iy/n)`.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Mesh {
    /// Number of cells per side.
    pub n: usize,
    /// Node coordinates, `(n+1)^2` entries in row-major order.
    pub nodes: Vec<[f64; 2]>,
    /// Vertex index triples, counter-clockwise, `2*n^2` entries.
    pub triangles: Vec<[usize; 3]>,
    /// `boundary[i]` is true iff node `i` lies on the boundary of the square.
    pub boundary: Vec<bool>,
    /// Mesh size `1/n` (the cell edge length; diagonals are `sqrt(2)/n`).
    pub h: f64,
}

impl Mesh {
    /// Builds the uniform mesh with `n` cells per side.
    pub fn uniform(n: usize) -> Result<Mesh> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "mesh subdivision count must be at least 1".into(),
            ));
        }
        let np = n + 1;
        let mut nodes = Vec::with_capacity(np * np);
        let mut boundary = Vec::with_capacity(np * np);
        for iy in 0..np {
            for ix in 0..np {
                nodes.push([ix as f64 / n as f64, iy as f64 / n as f64]);
                boundary.push(ix == 0 || ix == n || iy == 0 || iy == n);
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for iy in 0..n {
            for ix in 0..n {
                let a = iy * np + ix;
                let b = iy * np + ix + 1;
                let c = (iy + 1) * np + ix + 1;
                let d = (iy + 1) * np + ix;
                // Diagonal a--c; both triangles counter-clockwise.
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        Ok(Mesh {
            n,
            nodes,
            triangles,
            boundary,
            h: 1.0 / n as f64,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Vertex coordinates of triangle `t`.
    pub fn vertices(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    /// Signed area of triangle `t` (positive for counter-clockwise).
    pub fn area(&self, t: usize) -> f64 {
        let [p0, p1, p2] = self.vertices(t);
        0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    }

    /// Centroid of triangle `t`.
    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let [p0, p1, p2] = self.vertices(t);
        [(p0[0] + p1[0] + p2[0]) / 3.0, (p0[1] + p1[1] + p2[1]) / 3.0]
    }

    /// Maps a barycentric point on triangle `t` to cartesian coordinates.
    pub fn point(&self, t: usize, bary: [f64; 3]) -> [f64; 2] {
        let [p0, p1, p2] = self.vertices(t);
        [
            bary[0] * p0[0] + bary[1] * p1[0] + bary[2] * p2[0],
            bary[0] * p0[1] + bary[1] * p1[1] + bary[2] * p2[1],
        ]
    }

    /// Constant gradients of the three barycentric coordinate functions on
    /// triangle `t`, as `[[d/dx, d/dy]; 3]`.
    pub fn barycentric_gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let [p0, p1, p2] = self.vertices(t);
        let two_a = 2.0 * self.area(t);
        [
            [(p1[1] - p2[1]) / two_a, (p2[0] - p1[0]) / two_a],
            [(p2[1] - p0[1]) / two_a, (p0[0] - p2[0]) / two_a],
            [(p0[1] - p1[1]) / two_a, (p1[0] - p0[0]) / two_a],
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_subdivisions() {
        assert!(Mesh::uniform(0).is_err());
    }

    #[test]
    fn smallest_mesh_counts() {
        let m = Mesh::uniform(1).unwrap();
        assert_eq!(m.n_nodes(), 4);
        assert_eq!(m.n_triangles(), 2);
        assert_eq!(m.boundary.iter().filter(|b| **b).count(), 4);
        assert_eq!(m.h, 1.0);
    }

    #[test]
    fn small_mesh_counts() {
        let m = Mesh::uniform(2).unwrap();
        assert_eq!(m.n_nodes(), 9);
        assert_eq!(m.n_triangles(), 8);
        assert_eq!(m.boundary.iter().filter(|b| **b).count(), 8);
        // The single interior node:
        assert!(!m.boundary[4]);
        assert_eq!(m.nodes[4], [0.5, 0.5]);
    }

    #[test]
    fn production_mesh_counts() {
        let m = Mesh::uniform(40).unwrap();
        assert_eq!(m.n_nodes(), 1681);
        assert_eq!(m.n_triangles(), 3200);
        assert_eq!(m.h, 1.0 / 40.0);
        assert_eq!(m.boundary.iter().filter(|b| **b).count(), 160);
    }

    #[test]
    fn triangles_are_counter_clockwise_with_equal_areas() {
        for n in [1usize, 2, 3, 7, 16] {
            let m = Mesh::uniform(n).unwrap();
            let expect = 1.0 / (2.0 * (n * n) as f64);
            let mut total = 0.0;
            for t in 0..m.n_triangles() {
                let a = m.area(t);
                assert!(a > 0.0, "triangle {t} of n={n} not counter-clockwise");
                assert!((a - expect).abs() <= 1e-15, "area mismatch at n={n}");
                total += a;
            }
            assert!(
                (total - 1.0).abs() <= 1e-12,
                "areas of n={n} sum to {total}"
            );
        }
    }

    #[test]
    fn boundary_flags_match_coordinates() {
        let m = Mesh::uniform(5).unwrap();
        for (i, p) in m.nodes.iter().enumerate() {
            let on_edge = p[0] == 0.0 || p[0] == 1.0 || p[1] == 0.0 || p[1] == 1.0;
            assert_eq!(m.boundary[i], on_edge);
        }
        assert_eq!(m.boundary.iter().filter(|b| **b).count(), 4 * 5);
    }

    #[test]
    fn barycentric_gradients_sum_to_zero_and_match_affine_identity() {
        let m = Mesh::uniform(3).unwrap();
        for t in 0..m.n_triangles() {
            let g = m.barycentric_gradients(t);
            for d in 0..2 {
                let s: f64 = g.iter().map(|gi| gi[d]).sum();
                assert!(s.abs() <= 1e-12);
            }
            // lambda_i(v_j) = delta_ij reproduced by the affine form
            // lambda_i(p) = lambda_i(centroid) + grad . (p - centroid).
            let c = m.centroid(t);
            let vs = m.vertices(t);
            for (i, v) in vs.iter().enumerate() {
                for (j, gj) in g.iter().enumerate() {
                    let val = 1.0 / 3.0 + gj[0] * (v[0] - c[0]) + gj[1] * (v[1] - c[1]);
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((val - expect).abs() <= 1e-12);
                }
            }
        }
    }
}
