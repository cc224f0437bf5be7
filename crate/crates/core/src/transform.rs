//! Change of variables `v = ln u`, `w = v_t`, the Volterra reconstruction
//! `v = ∫_{t0}^t w + ln f0`, and the coefficient-free operator
//!
//! ```text
//! K(w) = w_t − Δw − b·∇w − 2∇w·∫_{t0}^t ∇w dτ − 2∇w·∇ln f0
//! ```
//!
//! which vanishes on exact data whatever the coefficient `c` is.

use crate::error::{domain, shape, Error, Result};
use crate::forward::{Drift, FaceTrace, LateralTrace};
use crate::grid::{diff, interpolate_to, Axis, Rank, ScalarField, SpaceTimeGrid, Stencil, Stencils};
use crate::noise::spline_derivatives;

/// How derived data are differentiated: grid stencils, or natural cubic
/// splines through the samples (preferable on smoothed noisy data).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DerivativeRule {
    #[default]
    Stencil,
    Spline,
}

/// Lateral Cauchy data for `w` and the measured slice `ln f0`.
#[derive(Clone, Debug, PartialEq)]
pub struct CauchyData {
    pub grid: SpaceTimeGrid,
    /// `∂_t g0 / g0` on `S_T`.
    pub p0: LateralTrace,
    /// `∂_t (g1 / g0)` on `Γ_T`.
    pub p1: FaceTrace,
    pub f0_tilde: ScalarField,
    pub grad_f0_tilde: [ScalarField; 2],
}

impl CauchyData {
    /// All-zero data on `grid`: `p0 = p1 = 0`, `f0 ≡ 1`.
    pub fn zero(grid: SpaceTimeGrid) -> Self {
        Self {
            grid,
            p0: LateralTrace::constant(grid, 0.0),
            p1: FaceTrace::from_fn(grid, |_, _| 0.0),
            f0_tilde: ScalarField::zeros(grid, Rank::Space),
            grad_f0_tilde: [ScalarField::zeros(grid, Rank::Space), ScalarField::zeros(grid, Rank::Space)],
        }
    }

    /// Data with a prescribed `ln f0`; gradients by grid stencils.
    pub fn with_f0_tilde(grid: SpaceTimeGrid, p0: LateralTrace, p1: FaceTrace, f0_tilde: ScalarField) -> Result<Self> {
        f0_tilde.ensure_rank(Rank::Space)?;
        let gx = diff(&f0_tilde, Axis::X1, 1)?;
        let gy = diff(&f0_tilde, Axis::X2, 1)?;
        let d = Self { grid, p0, p1, f0_tilde, grad_f0_tilde: [gx, gy] };
        d.check()?;
        Ok(d)
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.p0.grid() != &self.grid || self.p1.grid() != &self.grid {
            return Err(shape("boundary traces live on a different grid"));
        }
        for f in std::iter::once(&self.f0_tilde).chain(&self.grad_f0_tilde) {
            f.ensure_rank(Rank::Space)?;
            if f.grid().nx() != self.grid.nx() || !f.grid().same_spatial_extent(&self.grid) {
                return Err(shape("f0 data sampled on a different spatial grid"));
            }
        }
        Ok(())
    }
}

pub fn log_field(u: &ScalarField) -> Result<ScalarField> {
    if let Some((index, &value)) = u.values().iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::Nonpositive { index, value });
    }
    Ok(u.map(f64::ln))
}

pub fn time_derivative_w(v: &ScalarField) -> Result<ScalarField> {
    v.ensure_rank(Rank::SpaceTime)?;
    diff(v, Axis::T, 1)
}

/// Cumulative trapezoid `∫_{t_{k0}}^{t_k} w dτ` along every time line.
pub(crate) fn cumulative(w: &[f64], nt: usize, k0: usize, ht: f64) -> Vec<f64> {
    let half = 0.5 * ht;
    let mut out = vec![0.0; w.len()];
    for (line, o) in w.chunks_exact(nt).zip(out.chunks_exact_mut(nt)) {
        for k in k0 + 1..nt {
            o[k] = o[k - 1] + half * (line[k - 1] + line[k]);
        }
        for k in (0..k0).rev() {
            o[k] = o[k + 1] - half * (line[k] + line[k + 1]);
        }
    }
    out
}

/// Transpose of [`cumulative`].
pub(crate) fn cumulative_transpose(r: &[f64], nt: usize, k0: usize, ht: f64) -> Vec<f64> {
    let half = 0.5 * ht;
    let mut out = vec![0.0; r.len()];
    for (line, o) in r.chunks_exact(nt).zip(out.chunks_exact_mut(nt)) {
        let mut acc = 0.0;
        for k in (k0 + 1..nt).rev() {
            acc += line[k];
            o[k - 1] += half * acc;
            o[k] += half * acc;
        }
        acc = 0.0;
        for m in 0..k0 {
            acc += line[m];
            o[m] -= half * acc;
            o[m + 1] -= half * acc;
        }
    }
    out
}

/// `v(x, t) = ∫_{t0}^t w dτ + f̃0(x)`; `t0` must be a time node.
pub fn volterra_reconstruct(w: &ScalarField, f0_tilde: &ScalarField, t0: f64) -> Result<ScalarField> {
    w.ensure_rank(Rank::SpaceTime)?;
    f0_tilde.ensure_rank(Rank::Space)?;
    let g = *w.grid();
    if f0_tilde.grid().nx() != g.nx() {
        return Err(shape("f0_tilde and w use different spatial grids"));
    }
    let k0 = g.time_index(t0)?;
    let nt = g.nt();
    let mut v = cumulative(w.values(), nt, k0, g.ht());
    for (s, line) in v.chunks_exact_mut(nt).enumerate() {
        let base = f0_tilde.values()[s];
        for x in line.iter_mut() {
            *x += base;
        }
        line[k0] = base;
    }
    Ok(ScalarField::from_vec_unchecked(g, Rank::SpaceTime, v))
}

/// Intermediate quantities of `K(w)` reused by the functional gradient.
pub(crate) struct KParts {
    pub(crate) k: Vec<f64>,
    pub(crate) gx: Vec<f64>,
    pub(crate) gy: Vec<f64>,
    pub(crate) vx: Vec<f64>,
    pub(crate) vy: Vec<f64>,
}

pub(crate) fn k_parts(
    st: &Stencils,
    g: &SpaceTimeGrid,
    w: &[f64],
    data: &CauchyData,
    drift: &Drift,
    k0: usize,
) -> KParts {
    let dims = g.dims(Rank::SpaceTime);
    let nt = g.nt();
    let wt = st.d1(w, dims, Axis::T);
    let wxx = st.d2(w, dims, Axis::X1);
    let wyy = st.d2(w, dims, Axis::X2);
    let gx = st.d1(w, dims, Axis::X1);
    let gy = st.d1(w, dims, Axis::X2);
    let vx = cumulative(&gx, nt, k0, g.ht());
    let vy = cumulative(&gy, nt, k0, g.ht());
    let fx = data.grad_f0_tilde[0].values();
    let fy = data.grad_f0_tilde[1].values();
    let b1 = drift.b1.values();
    let b2 = drift.b2.values();
    let k = (0..w.len())
        .map(|n| {
            let s = n / nt;
            wt[n] - wxx[n] - wyy[n] - b1[s] * gx[n] - b2[s] * gy[n]
                - 2.0 * (gx[n] * (vx[n] + fx[s]) + gy[n] * (vy[n] + fy[s]))
        })
        .collect();
    KParts { k, gx, gy, vx, vy }
}

#[allow(non_snake_case)]
pub fn apply_K(w: &ScalarField, data: &CauchyData, drift: &Drift, t0: f64) -> Result<ScalarField> {
    w.ensure_rank(Rank::SpaceTime)?;
    let g = *w.grid();
    if g != data.grid {
        return Err(shape("w and the Cauchy data live on different grids"));
    }
    data.check()?;
    drift.check(&g)?;
    let k0 = g.time_index(t0)?;
    let st = Stencils::new(&g);
    let parts = k_parts(&st, &g, w.values(), data, drift, k0);
    ScalarField::new(g, Rank::SpaceTime, parts.k)
}

fn time_derivative_series(series: &[f64], ht: f64, rule: DerivativeRule) -> Result<Vec<f64>> {
    match rule {
        DerivativeRule::Stencil => Ok(Stencil::first(series.len(), ht).apply_1d(series)),
        DerivativeRule::Spline => Ok(spline_derivatives(series, ht)?.0),
    }
}

fn spatial_gradient(f: &ScalarField, rule: DerivativeRule) -> Result<[ScalarField; 2]> {
    match rule {
        DerivativeRule::Stencil => Ok([diff(f, Axis::X1, 1)?, diff(f, Axis::X2, 1)?]),
        DerivativeRule::Spline => {
            let g = *f.grid();
            let n = g.nx();
            let mut gx = vec![0.0; n * n];
            let mut gy = vec![0.0; n * n];
            for j in 0..n {
                let line: Vec<f64> = (0..n).map(|i| f.at_s(i, j)).collect();
                let (d1, _) = spline_derivatives(&line, g.hx())?;
                for i in 0..n {
                    gx[g.idx_s(i, j)] = d1[i];
                }
            }
            for i in 0..n {
                let line: Vec<f64> = (0..n).map(|j| f.at_s(i, j)).collect();
                let (d1, _) = spline_derivatives(&line, g.hx())?;
                for j in 0..n {
                    gy[g.idx_s(i, j)] = d1[j];
                }
            }
            Ok([ScalarField::new(g, Rank::Space, gx)?, ScalarField::new(g, Rank::Space, gy)?])
        }
    }
}

/// Cauchy data for `w` from the Dirichlet trace `g0`, the flux `g1` on `Γ_T`
/// and the slice `f0`. `f0` may be sampled on a denser spatial grid; its
/// logarithm and gradient are formed there and then transferred to `grid`.
pub fn derive_cauchy(
    grid: &SpaceTimeGrid,
    g0: &LateralTrace,
    g1: &FaceTrace,
    f0: &ScalarField,
    rule: DerivativeRule,
) -> Result<CauchyData> {
    if g0.grid() != grid || g1.grid() != grid {
        return Err(shape("g0 and g1 must live on the inversion grid"));
    }
    if let Some(p) = g0.values().iter().position(|&v| !(v > 0.0)) {
        return Err(domain(format!("g0 must be positive, got {} at trace entry {p}", g0.values()[p])));
    }
    let ht = grid.ht();
    let mut p0 = Vec::with_capacity(g0.values().len());
    for r in 0..g0.ring_len() {
        // ∂_t g0 / g0 = ∂_t ln g0
        let s: Vec<f64> = g0.series(r).iter().map(|v| v.ln()).collect();
        p0.extend(time_derivative_series(&s, ht, rule)?);
    }
    let p0 = LateralTrace::new(*grid, p0)?;

    let g0_face = g0.gamma_face();
    let nt = grid.nt();
    let mut p1 = Vec::with_capacity(g1.values().len());
    for j in 0..grid.nx() {
        let q: Vec<f64> = (0..nt).map(|k| g1.at(j, k) / g0_face.at(j, k)).collect();
        p1.extend(time_derivative_series(&q, ht, rule)?);
    }
    let p1 = FaceTrace::new(*grid, p1)?;

    let f0_tilde_fine = log_field(f0)?;
    let [gx, gy] = spatial_gradient(&f0_tilde_fine, rule)?;
    let f0_tilde = interpolate_to(&f0_tilde_fine, grid)?;
    let grad = [interpolate_to(&gx, grid)?, interpolate_to(&gy, grid)?];
    let data = CauchyData { grid: *grid, p0, p1, f0_tilde, grad_f0_tilde: grad };
    data.check()?;
    Ok(data)
}
