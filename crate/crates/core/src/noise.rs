//! Multiplicative measurement noise and the preprocessing applied before
//! differentiating noisy data.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{domain, Result};
use crate::forward::{FaceTrace, MeasurementData};
use crate::grid::{Rank, ScalarField};

/// Name of the generator recorded in run manifests.
pub const RNG_ALGORITHM: &str = "ChaCha20 (rand_chacha), stream 0 = g1 in (x2, t) order, stream 1 = f0 in (x1, x2) order";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    sigma: f64,
    pub seed: u64,
    /// Penalty weight of the smoother; `None` selects it by generalized
    /// cross-validation.
    pub smoother_strength: Option<f64>,
}

impl NoiseConfig {
    pub fn new(sigma: f64, seed: u64, smoother_strength: Option<f64>) -> Result<Self> {
        if !(0.0..=0.5).contains(&sigma) {
            return Err(domain(format!("noise level must lie in [0, 0.5], got {sigma}")));
        }
        if let Some(s) = smoother_strength {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(domain(format!("smoother strength must be >= 0, got {s}")));
            }
        }
        Ok(Self { sigma, seed, smoother_strength })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// `g1 → g1(1 + σξ)`, `f0 → f0(1 + σξ)` with independent standard normal
/// `ξ` per detector node.
pub fn add_noise(m: &MeasurementData, cfg: &NoiseConfig) -> MeasurementData {
    let mut out = m.clone();
    if cfg.sigma == 0.0 {
        return out;
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    for v in out.g1.values_mut() {
        let xi: f64 = StandardNormal.sample(&mut rng);
        *v *= 1.0 + cfg.sigma * xi;
    }
    rng.set_stream(1);
    rng.set_word_pos(0);
    for v in out.f0.values_mut() {
        let xi: f64 = StandardNormal.sample(&mut rng);
        *v *= 1.0 + cfg.sigma * xi;
    }
    out
}

/// Penalty weights tried by generalized cross-validation.
pub fn gcv_sweep() -> [f64; 10] {
    std::array::from_fn(|i| 10f64.powi(i as i32 - 2))
}

/// `D2ᵀ D2` for the interior second-difference operator on `n` nodes.
fn second_difference_gram(n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for r in 1..n.saturating_sub(1) {
        let idx = [r - 1, r, r + 1];
        let c = [1.0, -2.0, 1.0];
        for a in 0..3 {
            for b in 0..3 {
                m[(idx[a], idx[b])] += c[a] * c[b];
            }
        }
    }
    m
}

/// Penalized least squares `min ‖s − d‖² + λ(‖D2_row s‖² + ‖D2_col s‖²)` on
/// an `n0 × n1` block, diagonalized by the eigenvectors of each axis.
struct BlockSmoother {
    q0: DMatrix<f64>,
    q1: DMatrix<f64>,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
}

impl BlockSmoother {
    fn new(n0: usize, n1: usize) -> Self {
        let e0 = SymmetricEigen::new(second_difference_gram(n0));
        let e1 = SymmetricEigen::new(second_difference_gram(n1));
        // The exact kernel (affine sequences) comes back as O(eps) noise.
        let clean = |ev: &nalgebra::DVector<f64>| -> Vec<f64> {
            ev.iter().map(|&v| if v < 1e-9 { 0.0 } else { v }).collect()
        };
        Self {
            mu0: clean(&e0.eigenvalues),
            mu1: clean(&e1.eigenvalues),
            q0: e0.eigenvectors,
            q1: e1.eigenvectors,
        }
    }

    fn spectrum(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        self.q0.transpose() * data * &self.q1
    }

    fn gcv(&self, spec: &DMatrix<f64>, lambda: f64) -> f64 {
        let n = (self.mu0.len() * self.mu1.len()) as f64;
        let mut resid = 0.0;
        let mut trace = 0.0;
        for (i, m0) in self.mu0.iter().enumerate() {
            for (j, m1) in self.mu1.iter().enumerate() {
                let damp = lambda * (m0 + m1);
                let keep = 1.0 / (1.0 + damp);
                trace += keep;
                let r = spec[(i, j)] * damp * keep;
                resid += r * r;
            }
        }
        n * resid / (n - trace).powi(2)
    }

    fn apply(&self, spec: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
        let mut s = spec.clone();
        for (i, m0) in self.mu0.iter().enumerate() {
            for (j, m1) in self.mu1.iter().enumerate() {
                s[(i, j)] /= 1.0 + lambda * (m0 + m1);
            }
        }
        &self.q0 * s * self.q1.transpose()
    }
}

/// Smooths a row-major `n0 × n1` block; returns the values and the penalty
/// weight used.
pub fn smooth_block(values: &[f64], n0: usize, n1: usize, strength: Option<f64>) -> (Vec<f64>, f64) {
    if strength == Some(0.0) {
        return (values.to_vec(), 0.0);
    }
    let sm = BlockSmoother::new(n0, n1);
    let data = DMatrix::from_row_slice(n0, n1, values);
    let spec = sm.spectrum(&data);
    let lambda = strength.unwrap_or_else(|| {
        gcv_sweep()
            .into_iter()
            .map(|l| (l, sm.gcv(&spec, l)))
            .fold((f64::NAN, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
            .0
    });
    let s = sm.apply(&spec, lambda);
    let mut out = Vec::with_capacity(n0 * n1);
    for i in 0..n0 {
        for j in 0..n1 {
            out.push(s[(i, j)]);
        }
    }
    (out, lambda)
}

/// Smoothing weights chosen for each data block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothingReport {
    pub g1_strength: f64,
    pub f0_strength: f64,
}

/// Smooths the `g1` block on its `(x2, t)` grid and the `f0` block on its
/// own spatial grid.
pub fn smooth(m: &MeasurementData, cfg: &NoiseConfig) -> (MeasurementData, SmoothingReport) {
    let g = m.g1.grid();
    let (g1, g1_strength) = smooth_block(m.g1.values(), g.nx(), g.nt(), cfg.smoother_strength);
    let n = m.f0.grid().nx();
    let (f0, f0_strength) = smooth_block(m.f0.values(), n, n, cfg.smoother_strength);
    let out = MeasurementData {
        grid: m.grid,
        t0: m.t0,
        g1: FaceTrace::new(*g, g1).expect("shape preserved"),
        f0: ScalarField::new(*m.f0.grid(), Rank::Space, f0).expect("shape preserved"),
    };
    (out, SmoothingReport { g1_strength, f0_strength })
}

/// First and second derivatives at the samples of the natural cubic spline
/// through `values` on a uniform mesh.
pub fn spline_derivatives(values: &[f64], spacing: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = values.len();
    if n < 4 {
        return Err(domain(format!("spline needs at least 4 samples, got {n}")));
    }
    if !(spacing > 0.0) {
        return Err(domain("spline spacing must be positive"));
    }
    let h = spacing;
    // Second derivatives M with M[0] = M[n-1] = 0 by the Thomas algorithm on
    // M[i-1] + 4 M[i] + M[i+1] = 6 (y[i+1] - 2 y[i] + y[i-1]) / h².
    let m = n - 2;
    let mut diag = vec![4.0; m];
    let mut rhs: Vec<f64> = (1..n - 1)
        .map(|i| 6.0 * (values[i + 1] - 2.0 * values[i] + values[i - 1]) / (h * h))
        .collect();
    for i in 1..m {
        let l = 1.0 / diag[i - 1];
        diag[i] -= l;
        rhs[i] -= l * rhs[i - 1];
    }
    let mut inner = vec![0.0; m];
    inner[m - 1] = rhs[m - 1] / diag[m - 1];
    for i in (0..m - 1).rev() {
        inner[i] = (rhs[i] - inner[i + 1]) / diag[i];
    }
    let mut d2 = vec![0.0; n];
    d2[1..n - 1].copy_from_slice(&inner);
    let mut d1 = Vec::with_capacity(n);
    for i in 0..n - 1 {
        d1.push((values[i + 1] - values[i]) / h - h * (2.0 * d2[i] + d2[i + 1]) / 6.0);
    }
    d1.push((values[n - 1] - values[n - 2]) / h + h * (d2[n - 2] + 2.0 * d2[n - 1]) / 6.0);
    Ok((d1, d2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpaceTimeGrid;

    fn sample_data(nx: usize, nt: usize, f0_nx: usize) -> MeasurementData {
        let g = SpaceTimeGrid::new(1.0, 2.0, 1.0, nx, nt).unwrap();
        let gf = SpaceTimeGrid::new(1.0, 2.0, 1.0, f0_nx, nt).unwrap();
        MeasurementData::new(
            g,
            0.0,
            FaceTrace::from_fn(g, |y, t| 0.3 + 0.1 * y * t),
            ScalarField::from_fn_space(gf, |x, y| 1.0 + 0.5 * (3.0 * x).sin() * (2.0 * y).cos()),
        )
        .unwrap()
    }

    #[test]
    fn zero_sigma_is_identity() {
        let m = sample_data(9, 9, 9);
        let cfg = NoiseConfig::new(0.0, 7, None).unwrap();
        assert_eq!(add_noise(&m, &cfg), m);
    }

    #[test]
    fn noise_is_reproducible_and_shape_preserving() {
        let m = sample_data(9, 9, 17);
        let cfg = NoiseConfig::new(0.05, 42, None).unwrap();
        let a = add_noise(&m, &cfg);
        let b = add_noise(&m, &cfg);
        assert_eq!(a, b);
        assert_eq!(a.grid, m.grid);
        assert_eq!(a.f0.grid(), m.f0.grid());
        assert_ne!(a.f0, m.f0);
        let c = add_noise(&m, &NoiseConfig::new(0.05, 43, None).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn relative_rms_matches_sigma() {
        let m = sample_data(101, 101, 101);
        let cfg = NoiseConfig::new(0.05, 1, None).unwrap();
        let noisy = add_noise(&m, &cfg);
        let mut acc = 0.0;
        let mut count = 0usize;
        for (p, q) in noisy.g1.values().iter().zip(m.g1.values()).chain(noisy.f0.values().iter().zip(m.f0.values())) {
            acc += ((p - q) / q).powi(2);
            count += 1;
        }
        let rms = (acc / count as f64).sqrt();
        assert!(count >= 10_000);
        assert!((0.045..=0.055).contains(&rms), "{rms}");
    }

    #[test]
    fn sigma_bounds() {
        assert!(NoiseConfig::new(-0.1, 0, None).is_err());
        assert!(NoiseConfig::new(0.6, 0, None).is_err());
        assert!(NoiseConfig::new(0.1, 0, Some(-1.0)).is_err());
    }

    #[test]
    fn smoother_identity_and_constants() {
        let vals: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin()).collect();
        let (s, _) = smooth_block(&vals, 5, 6, Some(0.0));
        assert_eq!(s, vals);
        let c = vec![2.5; 30];
        for strength in [None, Some(10.0), Some(1e6)] {
            let (s, _) = smooth_block(&c, 5, 6, strength);
            assert!(s.iter().all(|v| (v - 2.5).abs() < 1e-10));
        }
    }

    #[test]
    fn smoother_reduces_noise_error() {
        let m = sample_data(17, 17, 81);
        let noisy = add_noise(&m, &NoiseConfig::new(0.05, 3, None).unwrap());
        let cfg = NoiseConfig::new(0.05, 3, None).unwrap();
        let (smoothed, report) = smooth(&noisy, &cfg);
        let rms = |a: &ScalarField| {
            (a.values().iter().zip(m.f0.values()).map(|(p, q)| (p - q).powi(2)).sum::<f64>()
                / a.values().len() as f64)
                .sqrt()
        };
        assert!(rms(&smoothed.f0) < rms(&noisy.f0), "{} vs {}", rms(&smoothed.f0), rms(&noisy.f0));
        assert!(report.f0_strength > 0.0);
    }

    #[test]
    fn spline_reproduces_polynomials() {
        let h = 0.01;
        let n = 101;
        let cubic: Vec<f64> = (0..n).map(|i| {
            let x = i as f64 * h;
            x * x * x - 2.0 * x * x + 0.5 * x + 1.0
        }).collect();
        let (d1, _) = spline_derivatives(&cubic, h).unwrap();
        for i in 25..n - 25 {
            let x = i as f64 * h;
            assert!((d1[i] - (3.0 * x * x - 4.0 * x + 0.5)).abs() < 1e-10, "node {i}");
        }
        let (d1, d2) = spline_derivatives(&[3.0; 8], 0.5).unwrap();
        assert!(d1.iter().chain(&d2).all(|v| v.abs() < 1e-14));
        let lin: Vec<f64> = (0..8).map(|i| 2.0 - 0.75 * i as f64 * 0.5).collect();
        let (d1, d2) = spline_derivatives(&lin, 0.5).unwrap();
        assert!(d1.iter().all(|v| (v + 0.75).abs() < 1e-13));
        assert!(d2.iter().all(|v| v.abs() < 1e-12));
        assert!(spline_derivatives(&[1.0, 2.0, 3.0], 1.0).is_err());
    }
}
