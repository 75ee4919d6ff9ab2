//! Wiener path generation, dyadic coarsening, and the noise models driving
//! the velocity equation.
//!
//! Paths are sampled on a fine grid of `m0` uniform increments over
//! `[0, t_final]` and coarsened by block sums, so every time resolution of a
//! convergence study sees the *same* underlying Brownian path.

use crate::error::{Error, Result};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// A Brownian path stored as its finest-level increments.
#[derive(Debug, Clone)]
pub struct WienerPath {
    pub t_final: f64,
    /// Number of fine increments.
    pub m0: usize,
    pub base_seed: u64,
    pub sample: u64,
    /// `increments[j] ~ N(0, t_final/m0)`, independent.
    pub increments: Vec<f64>,
}

/// Domain-separation tag mixed into the stream key so path generation never
/// collides with any other use of the generator.
const PATH_TAG: &[u8; 16] = b"wiener-path-v1\0\0";

/// Generates the fine-level increments of one Brownian path.
///
/// The generator is ChaCha12 keyed by `(base_seed, sample)` (little-endian in
/// the 32-byte seed, plus a fixed domain tag), so sample `j` is reproducible
/// directly, without generating samples `0..j-1`. Standard normals come from
/// the Box-Muller transform: with `u1, u2` uniform on (0, 1] derived from the
/// top 53 bits of `next_u64`, the pair
/// `sqrt(-2 ln u1) * (cos(2 pi u2), sin(2 pi u2))` is standard normal.
pub fn generate_path(base_seed: u64, sample: u64, m0: usize, t_final: f64) -> Result<WienerPath> {
    if m0 == 0 {
        return Err(Error::InvalidParameter(
            "path must have at least one increment".into(),
        ));
    }
    if !(t_final > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "final time must be positive, got {t_final}"
        )));
    }
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&base_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&sample.to_le_bytes());
    seed[16..32].copy_from_slice(PATH_TAG);
    let mut rng = ChaCha12Rng::from_seed(seed);

    let sd = (t_final / m0 as f64).sqrt();
    let mut increments = Vec::with_capacity(m0);
    while increments.len() < m0 {
        let (z0, z1) = box_muller_pair(&mut rng);
        increments.push(sd * z0);
        if increments.len() < m0 {
            increments.push(sd * z1);
        }
    }
    Ok(WienerPath {
        t_final,
        m0,
        base_seed,
        sample,
        increments,
    })
}

/// One Box-Muller draw: two independent standard normals.
fn box_muller_pair(rng: &mut ChaCha12Rng) -> (f64, f64) {
    // Top 53 bits, shifted into (0, 1]: u = (x >> 11 + 1) * 2^-53. The +1
    // keeps u strictly positive so ln(u) is finite.
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / 9007199254740992.0);
    let u2 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / 9007199254740992.0);
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Sums a block of increments with balanced pairwise splitting.
///
/// For power-of-two lengths the summation trees of successive dyadic
/// coarsening levels compose exactly, so `coarse(m/2)` equals the pair sums
/// of `coarse(m)` *bitwise* and all levels share the terminal value `W(T)`.
fn block_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => block_sum(&xs[..n / 2]) + block_sum(&xs[n / 2..]),
    }
}

/// Coarsens a path to `m` increments by block sums. `m` must divide the
/// fine increment count.
pub fn coarse_increments(path: &WienerPath, m: usize) -> Result<Vec<f64>> {
    if m == 0 || path.m0 % m != 0 {
        return Err(Error::Incompatible(format!(
            "cannot coarsen {} increments to {m}",
            path.m0
        )));
    }
    let b = path.m0 / m;
    Ok((0..m)
        .map(|i| block_sum(&path.increments[i * b..(i + 1) * b]))
        .collect())
}

/// The Milstein quadratic-variation weight `((dW)^2 - k) / 2` multiplying
/// the correction field over a step of size `k`.
pub fn milstein_weight(dw: f64, k: f64) -> f64 {
    0.5 * (dw * dw - k)
}

/// Multiplicative noise entering the velocity equation.
///
/// `diffusion` is the coefficient field G(u) multiplying the Wiener
/// increment; `correction` is DG(u)G(u), the field multiplying the Milstein
/// weight. Models must map (discretely) divergence-free fields to
/// divergence-free fields for the pressure decoupling to hold.
pub trait NoiseModel: Sync {
    fn diffusion(&self, u: &[f64]) -> Vec<f64>;
    fn correction(&self, u: &[f64]) -> Vec<f64>;
}

/// `G(u) = alpha * u`, hence `DG(u)G(u) = alpha^2 * u`.
#[derive(Debug, Clone, Copy)]
pub struct LinearNoise {
    pub alpha: f64,
}

impl NoiseModel for LinearNoise {
    fn diffusion(&self, u: &[f64]) -> Vec<f64> {
        u.iter().map(|v| self.alpha * v).collect()
    }

    fn correction(&self, u: &[f64]) -> Vec<f64> {
        let a2 = self.alpha * self.alpha;
        u.iter().map(|v| a2 * v).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_degenerate_parameters() {
        assert!(generate_path(1, 0, 0, 1.0).is_err());
        assert!(generate_path(1, 0, 8, 0.0).is_err());
        assert!(generate_path(1, 0, 8, -1.0).is_err());
    }

    #[test]
    fn paths_are_deterministic_and_keyed_by_sample() {
        let a = generate_path(42, 7, 256, 1.0).unwrap();
        let b = generate_path(42, 7, 256, 1.0).unwrap();
        assert_eq!(a.increments, b.increments);
        let c = generate_path(42, 8, 256, 1.0).unwrap();
        assert_ne!(a.increments, c.increments);
        let d = generate_path(43, 7, 256, 1.0).unwrap();
        assert_ne!(a.increments, d.increments);
    }

    #[test]
    fn sample_keying_is_prefix_free() {
        // Sample j is reachable without touching samples 0..j: directly
        // generating sample 1000 equals generating it after other samples.
        let direct = generate_path(9, 1000, 64, 1.0).unwrap();
        let _ = generate_path(9, 0, 64, 1.0).unwrap();
        let again = generate_path(9, 1000, 64, 1.0).unwrap();
        assert_eq!(direct.increments, again.increments);
    }

    #[test]
    fn increment_moments_match_brownian_scaling() {
        // Pool 100 samples of 1024 increments with t_final = 2.
        let t_final = 2.0;
        let m0 = 1024;
        let mut pool = Vec::new();
        for s in 0..100 {
            pool.extend(generate_path(5, s, m0, t_final).unwrap().increments);
        }
        let n = pool.len() as f64;
        let var_expect = t_final / m0 as f64;
        let mean = pool.iter().sum::<f64>() / n;
        let var = pool.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        // Mean must lie within 4 standard errors of zero.
        assert!(mean.abs() <= 4.0 * (var_expect / n).sqrt(), "mean {mean}");
        let ratio = var / var_expect;
        assert!((0.97..=1.03).contains(&ratio), "variance ratio {ratio}");
    }

    #[test]
    fn third_and_fourth_moments_are_gaussian() {
        let m0 = 4096;
        let mut pool = Vec::new();
        for s in 0..25 {
            pool.extend(generate_path(11, s, m0, 1.0).unwrap().increments);
        }
        let sd = (1.0 / m0 as f64).sqrt();
        let n = pool.len() as f64;
        let skew = pool.iter().map(|x| (x / sd).powi(3)).sum::<f64>() / n;
        let kurt = pool.iter().map(|x| (x / sd).powi(4)).sum::<f64>() / n;
        // SE(skewness) ~ sqrt(15/n), SE(kurtosis) ~ sqrt(96/n) for normals.
        assert!(skew.abs() <= 4.0 * (15.0 / n).sqrt(), "skewness {skew}");
        assert!(
            (kurt - 3.0).abs() <= 4.0 * (96.0 / n).sqrt(),
            "kurtosis {kurt}"
        );
    }

    #[test]
    fn coarsening_validates_block_compatibility() {
        let p = generate_path(1, 0, 12, 1.0).unwrap();
        assert!(coarse_increments(&p, 0).is_err());
        assert!(coarse_increments(&p, 5).is_err());
        assert!(coarse_increments(&p, 24).is_err());
        assert_eq!(coarse_increments(&p, 12).unwrap(), p.increments);
    }

    #[test]
    fn dyadic_coarsening_telescopes_bitwise() {
        let p = generate_path(3, 2, 2048, 1.0).unwrap();
        let mut prev = coarse_increments(&p, 2048).unwrap();
        let mut m = 1024;
        while m >= 1 {
            let cur = coarse_increments(&p, m).unwrap();
            for i in 0..m {
                assert_eq!(cur[i], prev[2 * i] + prev[2 * i + 1], "level m={m} i={i}");
            }
            prev = cur;
            m /= 2;
        }
        // All levels share the terminal value exactly.
        let w_t = coarse_increments(&p, 1).unwrap()[0];
        for m in [2048usize, 512, 64, 8, 1] {
            let c = coarse_increments(&p, m).unwrap();
            assert_eq!(block_sum(&c), w_t);
        }
    }

    #[test]
    fn milstein_weight_examples() {
        // k = 1/16: sqrt(k) = 1/4 is exact, so (sqrt k)^2 - k is exactly 0.
        let k: f64 = 1.0 / 16.0;
        assert_eq!(milstein_weight(k.sqrt(), k), 0.0);
        assert_eq!(milstein_weight(-k.sqrt(), k), 0.0);
        assert_eq!(milstein_weight(0.0, 0.1), -0.05);
    }

    #[test]
    fn milstein_weight_moments() {
        // Over Brownian increments with variance k: E[w] = 0, Var[w] = k^2/2.
        let m0 = 2048;
        let k = 1.0 / m0 as f64;
        let mut ws = Vec::new();
        for s in 0..50 {
            let p = generate_path(21, s, m0, 1.0).unwrap();
            ws.extend(p.increments.iter().map(|dw| milstein_weight(*dw, k)));
        }
        let n = ws.len() as f64;
        let mean = ws.iter().sum::<f64>() / n;
        let var = ws.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / (n - 1.0);
        let var_expect = k * k / 2.0;
        assert!(mean.abs() <= 4.0 * (var_expect / n).sqrt(), "mean {mean}");
        let ratio = var / var_expect;
        assert!((0.9..=1.1).contains(&ratio), "variance ratio {ratio}");
    }

    #[test]
    fn linear_noise_fields() {
        let model = LinearNoise { alpha: 0.5 };
        let u = vec![1.0, -2.0, 0.25];
        assert_eq!(model.diffusion(&u), vec![0.5, -1.0, 0.125]);
        assert_eq!(model.correction(&u), vec![0.25, -0.5, 0.0625]);
        let off = LinearNoise { alpha: 0.0 };
        assert!(off.diffusion(&u).iter().all(|v| *v == 0.0));
        assert!(off.correction(&u).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_noise_lipschitz_identity() {
        let model = LinearNoise { alpha: 0.5 };
        let u = vec![1.0, 2.0, 3.0];
        let v = vec![0.0, -1.0, 5.0];
        let gu = model.diffusion(&u);
        let gv = model.diffusion(&v);
        let lhs: f64 = gu
            .iter()
            .zip(&gv)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let rhs: f64 = u
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!((lhs - 0.5 * rhs).abs() <= 1e-14);
    }

    proptest! {
        /// Pairwise block summation composes across dyadic levels: the total
        /// over any coarse level equals the total over the fine level,
        /// bit for bit.
        #[test]
        fn coarse_total_matches_fine_total_bitwise(
            log_m0 in 3u32..=11,
            log_m in 0u32..=11,
            seed in 0u64..1000,
        ) {
            let m0 = 1usize << log_m0;
            let m = 1usize << log_m.min(log_m0);
            let p = generate_path(seed, 0, m0, 1.0).unwrap();
            let coarse = coarse_increments(&p, m).unwrap();
            prop_assert_eq!(block_sum(&coarse), block_sum(&p.increments));
        }
    }
}
