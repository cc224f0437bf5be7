//! Uniform space-time grids on `Ω × (−T, T)` with `Ω = (A, B)²`, nodal
//! fields, finite-difference stencils and the discrete Sobolev norms built
//! from them.
//!
//! Field values are stored row-major in `(i, j, k)` order where `i` indexes
//! `x1`, `j` indexes `x2` and `k` indexes time. Space-only fields drop `k`.

use crate::error::{domain, shape, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpaceTimeGrid {
    a: f64,
    b: f64,
    t: f64,
    nx: usize,
    nt: usize,
    hx: f64,
    ht: f64,
}

impl SpaceTimeGrid {
    pub fn new(a: f64, b: f64, t: f64, nx: usize, nt: usize) -> Result<Self> {
        if !(a > 0.0 && b > a && a.is_finite() && b.is_finite()) {
            return Err(domain(format!("need B > A > 0, got A={a}, B={b}")));
        }
        if !(t > 0.0 && t.is_finite()) {
            return Err(domain(format!("need T > 0, got T={t}")));
        }
        if nx < 3 || nt < 3 {
            return Err(domain(format!("need nx, nt >= 3, got nx={nx}, nt={nt}")));
        }
        Ok(Self {
            a,
            b,
            t,
            nx,
            nt,
            hx: (b - a) / (nx - 1) as f64,
            ht: 2.0 * t / (nt - 1) as f64,
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn t_half(&self) -> f64 {
        self.t
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn hx(&self) -> f64 {
        self.hx
    }
    pub fn ht(&self) -> f64 {
        self.ht
    }

    /// Spatial coordinate of node index `i` along either spatial axis.
    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.a + i as f64 * self.hx
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        -self.t + k as f64 * self.ht
    }

    pub fn len(&self, rank: Rank) -> usize {
        match rank {
            Rank::SpaceTime => self.nx * self.nx * self.nt,
            Rank::Space => self.nx * self.nx,
        }
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.nx + j) * self.nt + k
    }

    #[inline]
    pub fn idx_s(&self, i: usize, j: usize) -> usize {
        i * self.nx + j
    }

    pub fn dims(&self, rank: Rank) -> [usize; 3] {
        match rank {
            Rank::SpaceTime => [self.nx, self.nx, self.nt],
            Rank::Space => [self.nx, self.nx, 1],
        }
    }

    /// Same physical box `(A, B)² × (−T, T)` up to round-off.
    pub fn same_extent(&self, other: &SpaceTimeGrid) -> bool {
        let close = |p: f64, q: f64| (p - q).abs() <= 1e-12 * (1.0 + p.abs().max(q.abs()));
        close(self.a, other.a) && close(self.b, other.b) && close(self.t, other.t)
    }

    pub fn same_spatial_extent(&self, other: &SpaceTimeGrid) -> bool {
        let close = |p: f64, q: f64| (p - q).abs() <= 1e-12 * (1.0 + p.abs().max(q.abs()));
        close(self.a, other.a) && close(self.b, other.b)
    }

    /// Index of the time level at `t0`, or an error if `t0` is not a node.
    pub fn time_index(&self, t0: f64) -> Result<usize> {
        let s = (t0 + self.t) / self.ht;
        let nearest = s.round().clamp(0.0, (self.nt - 1) as f64) as usize;
        if (s - nearest as f64).abs() > 1e-9 {
            return Err(Error::TimeNotOnGrid {
                t0,
                nearest,
                nearest_t: self.time(nearest),
            });
        }
        Ok(nearest)
    }

    /// Same box and spatial resolution with a different number of time levels.
    pub fn with_nt(&self, nt: usize) -> Result<Self> {
        Self::new(self.a, self.b, self.t, self.nx, nt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rank {
    SpaceTime,
    Space,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X1,
    X2,
    T,
}

impl Axis {
    pub(crate) fn index(self) -> usize {
        match self {
            Axis::X1 => 0,
            Axis::X2 => 1,
            Axis::T => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: SpaceTimeGrid,
    rank: Rank,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: SpaceTimeGrid, rank: Rank, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len(rank) {
            return Err(shape(format!(
                "expected {} values, got {}",
                grid.len(rank),
                values.len()
            )));
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(domain(format!("non-finite value at node {p}")));
        }
        Ok(Self { grid, rank, values })
    }

    pub(crate) fn from_vec_unchecked(grid: SpaceTimeGrid, rank: Rank, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len(rank));
        Self { grid, rank, values }
    }

    pub fn zeros(grid: SpaceTimeGrid, rank: Rank) -> Self {
        Self::constant(grid, rank, 0.0)
    }

    pub fn constant(grid: SpaceTimeGrid, rank: Rank, value: f64) -> Self {
        Self {
            grid,
            rank,
            values: vec![value; grid.len(rank)],
        }
    }

    /// Space-time field sampled from `f(x1, x2, t)`.
    pub fn from_fn(grid: SpaceTimeGrid, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len(Rank::SpaceTime));
        for i in 0..grid.nx {
            for j in 0..grid.nx {
                for k in 0..grid.nt {
                    values.push(f(grid.x(i), grid.x(j), grid.time(k)));
                }
            }
        }
        Self::from_vec_unchecked(grid, Rank::SpaceTime, values)
    }

    /// Space-only field sampled from `f(x1, x2)`.
    pub fn from_fn_space(grid: SpaceTimeGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len(Rank::Space));
        for i in 0..grid.nx {
            for j in 0..grid.nx {
                values.push(f(grid.x(i), grid.x(j)));
            }
        }
        Self::from_vec_unchecked(grid, Rank::Space, values)
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }
    pub fn rank(&self) -> Rank {
        self.rank
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims(self.rank)
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.idx(i, j, k)]
    }

    pub fn at_s(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx_s(i, j)]
    }

    pub fn is_compatible(&self, other: &ScalarField) -> bool {
        self.rank == other.rank && self.grid == other.grid
    }

    pub(crate) fn ensure_compatible(&self, other: &ScalarField) -> Result<()> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(shape("fields live on different grids or ranks"))
        }
    }

    pub(crate) fn ensure_rank(&self, rank: Rank) -> Result<()> {
        if self.rank == rank {
            Ok(())
        } else {
            Err(shape(format!("expected a {rank:?} field, got {:?}", self.rank)))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        let values = self.values.iter().map(|&v| f(v)).collect();
        Self::from_vec_unchecked(self.grid, self.rank, values)
    }

    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        self.ensure_compatible(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&p, &q)| f(p, q))
            .collect();
        Ok(Self::from_vec_unchecked(self.grid, self.rank, values))
    }

    pub fn scale(&self, s: f64) -> ScalarField {
        self.map(|v| s * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Copy of time level `k` as a space-only field.
    pub fn time_slice(&self, k: usize) -> Result<ScalarField> {
        self.ensure_rank(Rank::SpaceTime)?;
        if k >= self.grid.nt {
            return Err(domain(format!("time level {k} out of range")));
        }
        let g = self.grid;
        let values = (0..g.nx * g.nx).map(|s| self.values[s * g.nt + k]).collect();
        Ok(Self::from_vec_unchecked(g, Rank::Space, values))
    }

    /// Constant-in-time extension of a space-only field.
    pub fn broadcast_time(&self) -> Result<ScalarField> {
        self.ensure_rank(Rank::Space)?;
        let g = self.grid;
        let mut values = Vec::with_capacity(g.len(Rank::SpaceTime));
        for &v in &self.values {
            values.extend(std::iter::repeat_n(v, g.nt));
        }
        Ok(Self::from_vec_unchecked(g, Rank::SpaceTime, values))
    }
}

// ---------------------------------------------------------------------------
// Stencils

/// Sparse rows of a 1D finite-difference matrix.
#[derive(Clone, Debug)]
pub(crate) struct Stencil {
    rows: Vec<Vec<(usize, f64)>>,
}

impl Stencil {
    /// Central first difference with second-order one-sided boundary rows.
    pub(crate) fn first(n: usize, h: f64) -> Self {
        assert!(n >= 3);
        let c = 1.0 / (2.0 * h);
        let mut rows = Vec::with_capacity(n);
        rows.push(vec![(0, -3.0 * c), (1, 4.0 * c), (2, -c)]);
        for i in 1..n - 1 {
            rows.push(vec![(i - 1, -c), (i + 1, c)]);
        }
        rows.push(vec![(n - 3, c), (n - 2, -4.0 * c), (n - 1, 3.0 * c)]);
        Self { rows }
    }

    /// Central second difference. Boundary rows use the four-point
    /// second-order one-sided formula when `n >= 4`.
    pub(crate) fn second(n: usize, h: f64) -> Self {
        assert!(n >= 3);
        let c = 1.0 / (h * h);
        let mut rows = Vec::with_capacity(n);
        if n >= 4 {
            rows.push(vec![(0, 2.0 * c), (1, -5.0 * c), (2, 4.0 * c), (3, -c)]);
        } else {
            rows.push(vec![(0, c), (1, -2.0 * c), (2, c)]);
        }
        for i in 1..n - 1 {
            rows.push(vec![(i - 1, c), (i, -2.0 * c), (i + 1, c)]);
        }
        if n >= 4 {
            rows.push(vec![
                (n - 4, -c),
                (n - 3, 4.0 * c),
                (n - 2, -5.0 * c),
                (n - 1, 2.0 * c),
            ]);
        } else {
            rows.push(vec![(0, c), (1, -2.0 * c), (2, c)]);
        }
        Self { rows }
    }

    pub(crate) fn len(&self) -> usize {
        self.rows.len()
    }

    pub(crate) fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.rows[r]
    }

    /// Apply to a 1D slice.
    pub(crate) fn apply_1d(&self, input: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(c, w)| w * input[c]).sum())
            .collect()
    }
}

fn strides(dims: [usize; 3]) -> [usize; 3] {
    [dims[1] * dims[2], dims[2], 1]
}

/// Calls `f(base, stride)` for every 1D line of the array along `axis`.
fn for_each_line(dims: [usize; 3], axis: usize, mut f: impl FnMut(usize, usize)) {
    let st = strides(dims);
    let (p, q) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    for a in 0..dims[p] {
        for b in 0..dims[q] {
            f(a * st[p] + b * st[q], st[axis]);
        }
    }
}

pub(crate) fn apply_axis(input: &[f64], dims: [usize; 3], axis: usize, s: &Stencil) -> Vec<f64> {
    debug_assert_eq!(s.len(), dims[axis]);
    let mut out = vec![0.0; input.len()];
    for_each_line(dims, axis, |base, stride| {
        for (r, row) in s.rows.iter().enumerate() {
            let mut acc = 0.0;
            for &(c, w) in row {
                acc += w * input[base + c * stride];
            }
            out[base + r * stride] = acc;
        }
    });
    out
}

pub(crate) fn apply_axis_transpose(
    input: &[f64],
    dims: [usize; 3],
    axis: usize,
    s: &Stencil,
) -> Vec<f64> {
    debug_assert_eq!(s.len(), dims[axis]);
    let mut out = vec![0.0; input.len()];
    for_each_line(dims, axis, |base, stride| {
        for (r, row) in s.rows.iter().enumerate() {
            let v = input[base + r * stride];
            for &(c, w) in row {
                out[base + c * stride] += w * v;
            }
        }
    });
    out
}

/// First and second difference stencils for each axis of a grid.
#[derive(Clone, Debug)]
pub(crate) struct Stencils {
    pub(crate) d1: [Stencil; 3],
    pub(crate) d2: [Stencil; 3],
}

impl Stencils {
    pub(crate) fn new(g: &SpaceTimeGrid) -> Self {
        Self::with_time_unit(g, 1.0)
    }

    /// Time derivatives taken with respect to `t / unit`.
    pub(crate) fn with_time_unit(g: &SpaceTimeGrid, unit: f64) -> Self {
        let ht = g.ht / unit;
        Self {
            d1: [
                Stencil::first(g.nx, g.hx),
                Stencil::first(g.nx, g.hx),
                Stencil::first(g.nt, ht),
            ],
            d2: [
                Stencil::second(g.nx, g.hx),
                Stencil::second(g.nx, g.hx),
                Stencil::second(g.nt, ht),
            ],
        }
    }

    pub(crate) fn d1(&self, v: &[f64], dims: [usize; 3], axis: Axis) -> Vec<f64> {
        apply_axis(v, dims, axis.index(), &self.d1[axis.index()])
    }

    pub(crate) fn d1_t(&self, v: &[f64], dims: [usize; 3], axis: Axis) -> Vec<f64> {
        apply_axis_transpose(v, dims, axis.index(), &self.d1[axis.index()])
    }

    pub(crate) fn d2(&self, v: &[f64], dims: [usize; 3], axis: Axis) -> Vec<f64> {
        apply_axis(v, dims, axis.index(), &self.d2[axis.index()])
    }

    pub(crate) fn d2_t(&self, v: &[f64], dims: [usize; 3], axis: Axis) -> Vec<f64> {
        apply_axis_transpose(v, dims, axis.index(), &self.d2[axis.index()])
    }

    /// Derivative of order `e` along one axis: `e = 3` is `d1 ∘ d2`.
    fn axis_derivative(&self, v: Vec<f64>, dims: [usize; 3], axis: usize, e: u8) -> Vec<f64> {
        match e {
            0 => v,
            1 => apply_axis(&v, dims, axis, &self.d1[axis]),
            2 => apply_axis(&v, dims, axis, &self.d2[axis]),
            3 => {
                let w = apply_axis(&v, dims, axis, &self.d2[axis]);
                apply_axis(&w, dims, axis, &self.d1[axis])
            }
            _ => unreachable!("derivative order above 3"),
        }
    }

    fn axis_derivative_t(&self, v: Vec<f64>, dims: [usize; 3], axis: usize, e: u8) -> Vec<f64> {
        match e {
            0 => v,
            1 => apply_axis_transpose(&v, dims, axis, &self.d1[axis]),
            2 => apply_axis_transpose(&v, dims, axis, &self.d2[axis]),
            3 => {
                let w = apply_axis_transpose(&v, dims, axis, &self.d1[axis]);
                apply_axis_transpose(&w, dims, axis, &self.d2[axis])
            }
            _ => unreachable!("derivative order above 3"),
        }
    }

    /// Mixed partial `D^alpha`, applied x1 first, then x2, then t.
    pub(crate) fn mixed(&self, v: &[f64], dims: [usize; 3], alpha: [u8; 3]) -> Vec<f64> {
        let mut out = v.to_vec();
        for (axis, &e) in alpha.iter().enumerate() {
            out = self.axis_derivative(out, dims, axis, e);
        }
        out
    }

    /// Transpose of [`Stencils::mixed`].
    pub(crate) fn mixed_t(&self, v: &[f64], dims: [usize; 3], alpha: [u8; 3]) -> Vec<f64> {
        let mut out = v.to_vec();
        for axis in (0..3).rev() {
            out = self.axis_derivative_t(out, dims, axis, alpha[axis]);
        }
        out
    }
}

/// Finite-difference derivative of order 1 or 2 along `axis`.
pub fn diff(f: &ScalarField, axis: Axis, order: u8) -> Result<ScalarField> {
    if f.rank == Rank::Space && axis == Axis::T {
        return Err(domain("time derivative of a space-only field"));
    }
    let dims = f.dims();
    if dims[axis.index()] < 3 {
        return Err(domain("axis has fewer than 3 nodes"));
    }
    let g = f.grid;
    let h = if axis == Axis::T { g.ht } else { g.hx };
    let n = dims[axis.index()];
    let s = match order {
        1 => Stencil::first(n, h),
        2 => Stencil::second(n, h),
        _ => return Err(Error::Unsupported(format!("derivative order {order}"))),
    };
    let values = apply_axis(&f.values, dims, axis.index(), &s);
    Ok(ScalarField::from_vec_unchecked(g, f.rank, values))
}

// ---------------------------------------------------------------------------
// Quadrature

pub(crate) fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

/// Weights integrating the piecewise-linear interpolant in time exactly
/// over `[lo, hi] ∩ [−T, T]`.
pub fn window_time_weights(g: &SpaceTimeGrid, lo: f64, hi: f64) -> Vec<f64> {
    let mut w = vec![0.0; g.nt];
    let h = g.ht;
    for k in 0..g.nt - 1 {
        let (t0, t1) = (g.time(k), g.time(k + 1));
        let a = lo.max(t0);
        let b = hi.min(t1);
        if b <= a {
            continue;
        }
        w[k] += ((t1 - a).powi(2) - (t1 - b).powi(2)) / (2.0 * h);
        w[k + 1] += ((b - t0).powi(2) - (a - t0).powi(2)) / (2.0 * h);
    }
    w
}

/// Nodal trapezoidal weights over `Ω` (space-only) or `Q_T` (space-time).
pub fn quadrature_weights(g: &SpaceTimeGrid, rank: Rank) -> Vec<f64> {
    let wx = trapezoid_weights(g.nx, g.hx);
    match rank {
        Rank::Space => product_weights(&wx, &wx, &[1.0]),
        Rank::SpaceTime => product_weights(&wx, &wx, &trapezoid_weights(g.nt, g.ht)),
    }
}

pub(crate) fn product_weights(w1: &[f64], w2: &[f64], wt: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(w1.len() * w2.len() * wt.len());
    for &a in w1 {
        for &b in w2 {
            for &c in wt {
                out.push(a * b * c);
            }
        }
    }
    out
}

pub(crate) fn weighted_sum_sq(v: &[f64], w: &[f64]) -> f64 {
    v.iter().zip(w).map(|(x, q)| q * x * x).sum()
}

/// Multi-indices `(a, b, c)` with `a + b + c <= k`, in a fixed order.
pub(crate) fn multi_indices(k: u8) -> Vec<[u8; 3]> {
    let mut out = Vec::new();
    for total in 0..=k {
        for a in (0..=total).rev() {
            for b in (0..=total - a).rev() {
                out.push([a, b, total - a - b]);
            }
        }
    }
    out
}

fn check_sobolev(f: &ScalarField, k: u8) -> Result<()> {
    f.ensure_rank(Rank::SpaceTime)?;
    if k > 3 {
        return Err(Error::Unsupported(format!("Sobolev index {k}")));
    }
    Ok(())
}

/// Discrete `‖f‖²_{H^k(Q_T)}`: trapezoidal sum over every mixed derivative
/// of total order `<= k`.
pub fn sobolev_norm_sq(f: &ScalarField, k: u8) -> Result<f64> {
    check_sobolev(f, k)?;
    let st = Stencils::new(&f.grid);
    let q = quadrature_weights(&f.grid, Rank::SpaceTime);
    Ok(sobolev_norm_sq_with(&st, &q, f.dims(), &f.values, k))
}

pub(crate) fn sobolev_norm_sq_with(
    st: &Stencils,
    q: &[f64],
    dims: [usize; 3],
    v: &[f64],
    k: u8,
) -> f64 {
    multi_indices(k)
        .into_iter()
        .map(|alpha| weighted_sum_sq(&st.mixed(v, dims, alpha), q))
        .sum()
}

/// `G v` where `⟨v, G v⟩ = ‖v‖²_{H^k}` in the nodal Euclidean inner product.
pub(crate) fn sobolev_gram_with(
    st: &Stencils,
    q: &[f64],
    dims: [usize; 3],
    v: &[f64],
    k: u8,
) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for alpha in multi_indices(k) {
        let mut d = st.mixed(v, dims, alpha);
        for (x, w) in d.iter_mut().zip(q) {
            *x *= w;
        }
        for (o, x) in out.iter_mut().zip(st.mixed_t(&d, dims, alpha)) {
            *o += x;
        }
    }
    out
}

/// Applies the Gram operator of the discrete `H^k` norm to `f`.
pub fn sobolev_gram(f: &ScalarField, k: u8) -> Result<ScalarField> {
    check_sobolev(f, k)?;
    let st = Stencils::new(&f.grid);
    let q = quadrature_weights(&f.grid, Rank::SpaceTime);
    let values = sobolev_gram_with(&st, &q, f.dims(), &f.values, k);
    Ok(ScalarField::from_vec_unchecked(f.grid, Rank::SpaceTime, values))
}

/// `‖f‖²_{H^{2,1}}` over the truncated cylinder `Ω × (−γT, γT)`: spatial
/// derivatives up to order two plus the first time derivative.
pub fn h21_norm_sq(f: &ScalarField, gamma: f64) -> Result<f64> {
    f.ensure_rank(Rank::SpaceTime)?;
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(domain(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    let g = f.grid;
    let st = Stencils::new(&g);
    let wx = trapezoid_weights(g.nx, g.hx);
    let wt = window_time_weights(&g, -gamma * g.t, gamma * g.t);
    let q = product_weights(&wx, &wx, &wt);
    const TERMS: [[u8; 3]; 7] = [
        [0, 0, 0],
        [1, 0, 0],
        [0, 1, 0],
        [2, 0, 0],
        [1, 1, 0],
        [0, 2, 0],
        [0, 0, 1],
    ];
    Ok(TERMS
        .iter()
        .map(|&alpha| weighted_sum_sq(&st.mixed(&f.values, f.dims(), alpha), &q))
        .sum())
}

// ---------------------------------------------------------------------------
// Interpolation

fn locate(x: f64, origin: f64, h: f64, n: usize) -> (usize, f64) {
    let s = ((x - origin) / h).clamp(0.0, (n - 1) as f64);
    let i = (s.floor() as usize).min(n - 2);
    (i, s - i as f64)
}

/// Trilinear (bilinear for space-only fields) transfer to another grid over
/// the same physical box.
pub fn interpolate_to(f: &ScalarField, target: &SpaceTimeGrid) -> Result<ScalarField> {
    let src = f.grid;
    let extent_ok = match f.rank {
        Rank::SpaceTime => src.same_extent(target),
        Rank::Space => src.same_spatial_extent(target),
    };
    if !extent_ok {
        return Err(shape("interpolation target covers a different box"));
    }
    let same_nodes = src.nx == target.nx && (f.rank == Rank::Space || src.nt == target.nt);
    if same_nodes {
        return Ok(ScalarField::from_vec_unchecked(*target, f.rank, f.values.clone()));
    }
    let xs: Vec<(usize, f64)> = (0..target.nx)
        .map(|i| locate(target.x(i), src.a, src.hx, src.nx))
        .collect();
    let mut out = Vec::with_capacity(target.len(f.rank));
    match f.rank {
        Rank::Space => {
            for &(i, fx) in &xs {
                for &(j, fy) in &xs {
                    let v = |ii: usize, jj: usize| f.values[src.idx_s(ii, jj)];
                    out.push(
                        (1.0 - fx) * ((1.0 - fy) * v(i, j) + fy * v(i, j + 1))
                            + fx * ((1.0 - fy) * v(i + 1, j) + fy * v(i + 1, j + 1)),
                    );
                }
            }
        }
        Rank::SpaceTime => {
            let ts: Vec<(usize, f64)> = (0..target.nt)
                .map(|k| locate(target.time(k), -src.t, src.ht, src.nt))
                .collect();
            for &(i, fx) in &xs {
                for &(j, fy) in &xs {
                    for &(k, ft) in &ts {
                        let v = |ii: usize, jj: usize| {
                            let base = src.idx(ii, jj, k);
                            (1.0 - ft) * f.values[base] + ft * f.values[base + 1]
                        };
                        out.push(
                            (1.0 - fx) * ((1.0 - fy) * v(i, j) + fy * v(i, j + 1))
                                + fx * ((1.0 - fy) * v(i + 1, j) + fy * v(i + 1, j + 1)),
                        );
                    }
                }
            }
        }
    }
    Ok(ScalarField::from_vec_unchecked(*target, f.rank, out))
}

/// Linear interpolation of samples on a uniform 1D mesh.
pub(crate) fn interp_1d(values: &[f64], origin: f64, h: f64, x: f64) -> f64 {
    let (i, fr) = locate(x, origin, h, values.len());
    (1.0 - fr) * values[i] + fr * values[i + 1]
}
