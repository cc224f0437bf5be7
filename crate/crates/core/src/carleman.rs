//! The Carleman weight `φ_λ = exp(2λ(x1² − t²))`, the weighted functional
//!
//! ```text
//! J(w) = e^{−2λB²} ∫ K(w)² φ_λ + β ‖w‖²_{H^k} + penalty · (trace misfits)
//! ```
//!
//! with its exact discrete gradient, and numerical checks of the Volterra
//! lemma, the Carleman estimate and the convexity gap.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{domain, shape, Error, Result};
use crate::forward::{ring_nodes, Drift, FaceTrace, LateralTrace};
use crate::grid::{
    product_weights, quadrature_weights, sobolev_gram_with, sobolev_norm_sq_with, trapezoid_weights,
    Axis, Rank, ScalarField, SpaceTimeGrid, Stencils,
};
use crate::transform::{cumulative, cumulative_transpose, k_parts, CauchyData};

/// `exp(2λ(x² − t²))`.
pub fn cwf(lambda: f64, x: f64, t: f64) -> f64 {
    (2.0 * lambda * (x * x - t * t)).exp()
}

/// `exp(2λ(x² − t² − B²))`, bounded by one on the cylinder.
pub fn cwf_normalized(lambda: f64, x: f64, t: f64, b: f64) -> f64 {
    (2.0 * lambda * (x * x - t * t - b * b)).exp()
}

/// Normalized weight at every space-time node.
fn weight_field(g: &SpaceTimeGrid, lambda: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(g.len(Rank::SpaceTime));
    for i in 0..g.nx() {
        for _ in 0..g.nx() {
            for k in 0..g.nt() {
                out.push(cwf_normalized(lambda, g.x(i), g.time(k), g.b()));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FunctionalParams {
    pub lambda: f64,
    pub beta: f64,
    pub k: u8,
    pub t0: f64,
    pub boundary_penalty: f64,
    /// Ball radius, used only when projection is enabled.
    pub radius: f64,
    /// Time unit of the regularizer: its time derivatives are taken with
    /// respect to `t / time_unit`. `1` gives the plain `H^k` norm.
    pub time_unit: f64,
}

impl FunctionalParams {
    /// `λ = 1`, `β = 0.01`, `k = 3`, penalty `1e3`.
    pub fn new(t0: f64) -> Self {
        Self { lambda: 1.0, beta: 0.01, k: 3, t0, boundary_penalty: 1e3, radius: 1e3, time_unit: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(domain(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(domain(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        if !(2..=3).contains(&self.k) {
            return Err(Error::Unsupported(format!("Sobolev index {}", self.k)));
        }
        if !(self.boundary_penalty >= 0.0 && self.boundary_penalty.is_finite()) {
            return Err(domain("boundary penalty must be >= 0"));
        }
        if !(self.radius > 0.0) {
            return Err(domain("ball radius must be positive"));
        }
        if !(self.time_unit > 0.0 && self.time_unit.is_finite()) {
            return Err(domain("time unit must be positive"));
        }
        Ok(())
    }
}

/// The three parts of `J`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JTerms {
    pub residual: f64,
    pub regularization: f64,
    pub penalty: f64,
}

impl JTerms {
    pub fn total(&self) -> f64 {
        self.residual + self.regularization + self.penalty
    }
}

/// `J` bound to one data set, with stencils and weights precomputed.
#[derive(Clone, Debug)]
pub struct Functional {
    grid: SpaceTimeGrid,
    data: CauchyData,
    drift: Drift,
    params: FunctionalParams,
    st: Stencils,
    reg_st: Stencils,
    q: Vec<f64>,
    qphi: Vec<f64>,
    k0: usize,
    ring: Vec<usize>,
    ring_w: Vec<f64>,
    face_w: Vec<f64>,
}

impl Functional {
    pub fn new(data: &CauchyData, drift: &Drift, params: FunctionalParams) -> Result<Self> {
        params.validate()?;
        data.check()?;
        let g = data.grid;
        drift.check(&g)?;
        let k0 = g.time_index(params.t0)?;
        let q = quadrature_weights(&g, Rank::SpaceTime);
        let qphi = q.iter().zip(weight_field(&g, params.lambda)).map(|(a, b)| a * b).collect();
        let wt = trapezoid_weights(g.nt(), g.ht());
        // Arc-length trapezoid on the square's perimeter gives every boundary
        // node the weight hx, corners included.
        let ring: Vec<usize> = ring_nodes(&g).into_iter().map(|(i, j)| g.idx_s(i, j)).collect();
        let ring_w = product_weights(&vec![g.hx(); ring.len()], &[1.0], &wt);
        let face_w = product_weights(&trapezoid_weights(g.nx(), g.hx()), &[1.0], &wt);
        Ok(Self {
            grid: g,
            data: data.clone(),
            drift: drift.clone(),
            params,
            st: Stencils::new(&g),
            reg_st: Stencils::with_time_unit(&g, params.time_unit),
            q,
            qphi,
            k0,
            ring,
            ring_w,
            face_w,
        })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn params(&self) -> &FunctionalParams {
        &self.params
    }

    pub fn data(&self) -> &CauchyData {
        &self.data
    }

    pub fn drift(&self) -> &Drift {
        &self.drift
    }

    fn check_len(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.grid.len(Rank::SpaceTime) {
            return Err(shape(format!(
                "w has {} values, the inversion grid needs {}",
                w.len(),
                self.grid.len(Rank::SpaceTime)
            )));
        }
        Ok(())
    }

    /// `∂w/∂x1` on `x1 = B`, indexed `j * nt + k`.
    fn face_flux(&self, w: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let row = self.st.d1[0].row(g.nx() - 1);
        let mut out = Vec::with_capacity(g.nx() * g.nt());
        for j in 0..g.nx() {
            for k in 0..g.nt() {
                out.push(row.iter().map(|&(c, a)| a * w[g.idx(c, j, k)]).sum());
            }
        }
        out
    }

    fn penalty(&self, w: &[f64]) -> f64 {
        let nt = self.grid.nt();
        let p0 = self.data.p0.values();
        let mut s = 0.0;
        for (r, &base) in self.ring.iter().enumerate() {
            for k in 0..nt {
                let e = w[base * nt + k] - p0[r * nt + k];
                s += self.ring_w[r * nt + k] * e * e;
            }
        }
        let p1 = self.data.p1.values();
        for ((f, p), q) in self.face_flux(w).iter().zip(p1).zip(&self.face_w) {
            s += q * (f - p).powi(2);
        }
        self.params.boundary_penalty * s
    }

    fn penalty_gradient(&self, w: &[f64], grad: &mut [f64]) {
        let g = &self.grid;
        let nt = g.nt();
        let pen = 2.0 * self.params.boundary_penalty;
        let p0 = self.data.p0.values();
        for (r, &base) in self.ring.iter().enumerate() {
            for k in 0..nt {
                let n = base * nt + k;
                grad[n] += pen * self.ring_w[r * nt + k] * (w[n] - p0[r * nt + k]);
            }
        }
        let row = self.st.d1[0].row(g.nx() - 1);
        let flux = self.face_flux(w);
        let p1 = self.data.p1.values();
        for j in 0..g.nx() {
            for k in 0..nt {
                let m = j * nt + k;
                let e = pen * self.face_w[m] * (flux[m] - p1[m]);
                for &(c, a) in row {
                    grad[g.idx(c, j, k)] += a * e;
                }
            }
        }
    }

    pub fn terms(&self, w: &[f64]) -> Result<JTerms> {
        self.check_len(w)?;
        let dims = self.grid.dims(Rank::SpaceTime);
        let parts = k_parts(&self.st, &self.grid, w, &self.data, &self.drift, self.k0);
        let residual = parts.k.iter().zip(&self.qphi).map(|(k, q)| q * k * k).sum();
        let regularization = if self.params.beta == 0.0 {
            0.0
        } else {
            self.params.beta * sobolev_norm_sq_with(&self.reg_st, &self.q, dims, w, self.params.k)
        };
        let penalty = if self.params.boundary_penalty == 0.0 { 0.0 } else { self.penalty(w) };
        Ok(JTerms { residual, regularization, penalty })
    }

    pub fn value(&self, w: &[f64]) -> Result<f64> {
        Ok(self.terms(w)?.total())
    }

    /// `J(w)` and its gradient in the nodal Euclidean inner product.
    pub fn value_and_gradient(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_len(w)?;
        let g = &self.grid;
        let dims = g.dims(Rank::SpaceTime);
        let nt = g.nt();
        let ht = g.ht();
        let st = &self.st;
        let parts = k_parts(st, g, w, &self.data, &self.drift, self.k0);
        let r: Vec<f64> = parts.k.iter().zip(&self.qphi).map(|(k, q)| 2.0 * q * k).collect();
        let residual: f64 = parts.k.iter().zip(&self.qphi).map(|(k, q)| q * k * k).sum();

        let b = [self.drift.b1.values(), self.drift.b2.values()];
        let f = [self.data.grad_f0_tilde[0].values(), self.data.grad_f0_tilde[1].values()];
        let gv = [(&parts.gx, &parts.vx), (&parts.gy, &parts.vy)];

        let mut grad = st.d1_t(&r, dims, Axis::T);
        for axis in [Axis::X1, Axis::X2] {
            for (o, x) in grad.iter_mut().zip(st.d2_t(&r, dims, axis)) {
                *o -= x;
            }
        }
        for (a, axis) in [Axis::X1, Axis::X2].into_iter().enumerate() {
            let (gx, vx) = gv[a];
            let rg: Vec<f64> = r.iter().zip(gx.iter()).map(|(p, q)| p * q).collect();
            let ct = cumulative_transpose(&rg, nt, self.k0, ht);
            // Coefficient of ∂_a h in the linearization, paired with r.
            let coef: Vec<f64> = (0..r.len())
                .map(|n| {
                    let s = n / nt;
                    b[a][s] * r[n] + 2.0 * (r[n] * (vx[n] + f[a][s]) + ct[n])
                })
                .collect();
            for (o, x) in grad.iter_mut().zip(st.d1_t(&coef, dims, axis)) {
                *o -= x;
            }
        }

        let mut regularization = 0.0;
        if self.params.beta != 0.0 {
            let gram = sobolev_gram_with(&self.reg_st, &self.q, dims, w, self.params.k);
            regularization = self.params.beta * w.iter().zip(&gram).map(|(a, b)| a * b).sum::<f64>();
            for (o, x) in grad.iter_mut().zip(gram) {
                *o += 2.0 * self.params.beta * x;
            }
        }
        let mut penalty = 0.0;
        if self.params.boundary_penalty != 0.0 {
            penalty = self.penalty(w);
            self.penalty_gradient(w, &mut grad);
        }
        Ok((residual + regularization + penalty, grad))
    }
}

fn check_field(w: &ScalarField, data: &CauchyData) -> Result<()> {
    w.ensure_rank(Rank::SpaceTime)?;
    if w.grid() != &data.grid {
        return Err(shape("w and the Cauchy data live on different grids"));
    }
    Ok(())
}

#[allow(non_snake_case)]
pub fn functional_J(w: &ScalarField, data: &CauchyData, drift: &Drift, params: &FunctionalParams) -> Result<f64> {
    check_field(w, data)?;
    Functional::new(data, drift, *params)?.value(w.values())
}

#[allow(non_snake_case)]
pub fn gradient_J(
    w: &ScalarField,
    data: &CauchyData,
    drift: &Drift,
    params: &FunctionalParams,
) -> Result<ScalarField> {
    check_field(w, data)?;
    let (_, g) = Functional::new(data, drift, *params)?.value_and_gradient(w.values())?;
    ScalarField::new(data.grid, Rank::SpaceTime, g)
}

// ---------------------------------------------------------------------------
// Verification

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LemmaReport {
    pub lambda: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl LemmaReport {
    /// `lhs <= rhs · (1 + slack)`.
    pub fn passes(&self, slack: f64) -> bool {
        self.lhs <= self.rhs * (1.0 + slack)
    }

    pub fn line(&self, slack: f64) -> String {
        let verdict = if self.passes(slack) { "pass" } else { "fail" };
        format!("LEMMA1 {verdict} lhs={:.6e} rhs={:.6e}", self.lhs, self.rhs)
    }
}

/// `∫(∫_{t0}^t q dτ)² φ_λ` against `(1/4λ) ∫ q² φ_λ`, both normalized.
pub fn check_volterra_lemma(q: &ScalarField, lambda: f64, t0: f64) -> Result<LemmaReport> {
    q.ensure_rank(Rank::SpaceTime)?;
    if !(lambda >= 1.0) {
        return Err(domain(format!("the Volterra estimate needs lambda >= 1, got {lambda}")));
    }
    let g = q.grid();
    let k0 = g.time_index(t0)?;
    let w: Vec<f64> = quadrature_weights(g, Rank::SpaceTime)
        .iter()
        .zip(weight_field(g, lambda))
        .map(|(a, b)| a * b)
        .collect();
    let c = cumulative(q.values(), g.nt(), k0, g.ht());
    let lhs = c.iter().zip(&w).map(|(v, p)| p * v * v).sum();
    let rhs = q.values().iter().zip(&w).map(|(v, p)| p * v * v).sum::<f64>() / (4.0 * lambda);
    Ok(LemmaReport { lambda, lhs, rhs })
}

/// Component integrals of the Carleman estimate for `∂_t − Δ`, all carrying
/// the normalized weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CarlemanReport {
    pub lambda: f64,
    /// `∫(u_t − Δu)² φ`.
    pub i_res: f64,
    /// `∫(u_t² + Σ u_{x_i x_j}²) φ`.
    pub i_2: f64,
    /// `∫(|∇u|² + λ² u²) φ`.
    pub i_1: f64,
    /// `e^{−2λT²} Σ_{t=±T} ∫_Ω (u_t² + |∇u|² + λ² u²)`.
    pub i_bdry: f64,
    /// `i_res / (i_2/λ + λ i_1 − i_bdry)` when the denominator is positive.
    pub c_hat: Option<f64>,
}

impl CarlemanReport {
    pub fn line(&self) -> String {
        match self.c_hat {
            Some(c) if c > 0.0 => format!("CARLEMAN pass lambda={} Chat={:.6e}", self.lambda, c),
            Some(c) => format!("CARLEMAN fail lambda={} Chat={:.6e}", self.lambda, c),
            None => format!("CARLEMAN fail lambda={} Chat=undefined (boundary terms dominate)", self.lambda),
        }
    }
}

pub fn check_carleman_estimate(u: &ScalarField, lambda: f64) -> Result<CarlemanReport> {
    u.ensure_rank(Rank::SpaceTime)?;
    if !(lambda > 0.0) {
        return Err(domain(format!("lambda must be positive, got {lambda}")));
    }
    let g = *u.grid();
    let dims = g.dims(Rank::SpaceTime);
    let st = Stencils::new(&g);
    let v = u.values();
    let ut = st.d1(v, dims, Axis::T);
    let ux = st.d1(v, dims, Axis::X1);
    let uy = st.d1(v, dims, Axis::X2);
    let uxx = st.d2(v, dims, Axis::X1);
    let uyy = st.d2(v, dims, Axis::X2);
    let uxy = st.mixed(v, dims, [1, 1, 0]);
    let w: Vec<f64> = quadrature_weights(&g, Rank::SpaceTime)
        .iter()
        .zip(weight_field(&g, lambda))
        .map(|(a, b)| a * b)
        .collect();
    let l2 = lambda * lambda;
    let (mut i_res, mut i_2, mut i_1) = (0.0, 0.0, 0.0);
    for n in 0..v.len() {
        i_res += w[n] * (ut[n] - uxx[n] - uyy[n]).powi(2);
        i_2 += w[n] * (ut[n].powi(2) + uxx[n].powi(2) + 2.0 * uxy[n].powi(2) + uyy[n].powi(2));
        i_1 += w[n] * (ux[n].powi(2) + uy[n].powi(2) + l2 * v[n].powi(2));
    }
    let ws = quadrature_weights(&g, Rank::Space);
    let mut ends = 0.0;
    for k in [0, g.nt() - 1] {
        for s in 0..ws.len() {
            let n = s * g.nt() + k;
            ends += ws[s] * (ut[n].powi(2) + ux[n].powi(2) + uy[n].powi(2) + l2 * v[n].powi(2));
        }
    }
    let i_bdry = (-2.0 * lambda * g.t_half().powi(2)).exp() * ends;
    let denom = i_2 / lambda + lambda * i_1 - i_bdry;
    let c_hat = (denom > 0.0).then(|| i_res / denom);
    Ok(CarlemanReport { lambda, i_res, i_2, i_1, i_bdry, c_hat })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvexityReport {
    pub gap: f64,
    pub bound: f64,
}

impl ConvexityReport {
    pub fn passes(&self) -> bool {
        self.gap >= self.bound
    }

    pub fn line(&self) -> String {
        let verdict = if self.passes() { "pass" } else { "fail" };
        format!("CONVEXITY {verdict} gap={:.6e} bound={:.6e}", self.gap, self.bound)
    }
}

/// Bregman gap `J(w2) − J(w1) − ⟨J'(w1), w2 − w1⟩` and `(β/2)‖w2 − w1‖²_{H^k}`.
pub fn check_convexity_gap(
    w1: &ScalarField,
    w2: &ScalarField,
    data: &CauchyData,
    drift: &Drift,
    params: &FunctionalParams,
) -> Result<ConvexityReport> {
    check_field(w1, data)?;
    check_field(w2, data)?;
    let f = Functional::new(data, drift, *params)?;
    Ok(convexity_gap_with(&f, w1.values(), w2.values()))
}

pub(crate) fn convexity_gap_with(f: &Functional, w1: &[f64], w2: &[f64]) -> ConvexityReport {
    let (j1, g1) = f.value_and_gradient(w1).expect("length checked");
    let j2 = f.value(w2).expect("length checked");
    let h: Vec<f64> = w2.iter().zip(w1).map(|(a, b)| a - b).collect();
    let dir: f64 = g1.iter().zip(&h).map(|(a, b)| a * b).sum();
    let dims = f.grid.dims(Rank::SpaceTime);
    let norm = sobolev_norm_sq_with(&f.reg_st, &f.q, dims, &h, f.params.k);
    ConvexityReport { gap: j2 - j1 - dir, bound: 0.5 * f.params.beta * norm }
}

// ---------------------------------------------------------------------------
// Parameter schedule

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheorySchedule {
    pub gamma: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub rho: f64,
    pub delta: f64,
    pub lambda_of_delta: f64,
    pub beta_of_delta: f64,
    /// The schedule gives `λ < 1`, below the range where the estimates hold.
    pub below_lambda1: bool,
}

impl TheorySchedule {
    pub fn line(&self) -> String {
        format!(
            "SCHEDULE gamma={} eta1={} eta2={} rho={} delta={} lambda={} beta={}{}",
            self.gamma,
            self.eta1,
            self.eta2,
            self.rho,
            self.delta,
            self.lambda_of_delta,
            self.beta_of_delta,
            if self.below_lambda1 { " flag=lambda<1" } else { "" }
        )
    }
}

/// `η1 = γ²T² + B² − A²`, `η2 = (1 − 3γ²)T² − 3(B² − A²)`,
/// `ρ = min(1, η2/η1)/2`, `λ(δ) = ln δ^{−1/η1}`, `β(δ) = 2e^{−λT²}`.
pub fn theory_schedule(gamma: f64, delta: f64, a: f64, b: f64, t: f64) -> Result<TheorySchedule> {
    if !(gamma > 0.0 && gamma < 1.0 / 3f64.sqrt()) {
        return Err(domain(format!("gamma must lie in (0, 1/sqrt(3)), got {gamma}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(b > a && a > 0.0 && t > 0.0) {
        return Err(domain("need B > A > 0 and T > 0"));
    }
    let spread = b * b - a * a;
    let eta1 = gamma * gamma * t * t + spread;
    let eta2 = (1.0 - 3.0 * gamma * gamma) * t * t - 3.0 * spread;
    if eta2 <= 0.0 {
        return Err(Error::InadmissibleGeometry {
            t,
            t_min: (3.0 * spread).sqrt(),
            t_min_gamma: (3.0 * spread / (1.0 - 3.0 * gamma * gamma)).sqrt(),
        });
    }
    let rho = 0.5 * (eta2 / eta1).min(1.0);
    let lambda = -delta.ln() / eta1;
    let beta = 2.0 * (-lambda * t * t).exp();
    Ok(TheorySchedule {
        gamma,
        eta1,
        eta2,
        rho,
        delta,
        lambda_of_delta: lambda,
        beta_of_delta: beta,
        below_lambda1: lambda < 1.0,
    })
}

// ---------------------------------------------------------------------------
// Randomized verification suites

/// A random combination of six low-frequency space-time modes.
pub fn random_smooth_field(g: SpaceTimeGrid, rng: &mut impl Rng) -> ScalarField {
    let modes: Vec<[f64; 7]> = (0..6)
        .map(|_| {
            let mut m = [0.0; 7];
            m[0] = rng.random_range(-1.0..1.0);
            for v in &mut m[1..4] {
                *v = rng.random_range(0.0..3.0);
            }
            for v in &mut m[4..] {
                *v = rng.random_range(0.0..2.0 * PI);
            }
            m
        })
        .collect();
    ScalarField::from_fn(g, |x, y, t| {
        modes.iter().map(|m| m[0] * (m[1] * x + m[4]).sin() * (m[2] * y + m[5]).sin() * (m[3] * t + m[6]).sin()).sum()
    })
}

/// Node values drawn uniformly from `[−1, 1]`.
pub fn random_nodal_field(g: SpaceTimeGrid, rank: Rank, rng: &mut impl Rng) -> ScalarField {
    let values = (0..g.len(rank)).map(|_| rng.random_range(-1.0..1.0)).collect();
    ScalarField::new(g, rank, values).expect("length matches grid")
}

/// Cauchy data with `p0`, `p1` and `f̃0` drawn uniformly from `[−1, 1]`.
pub fn random_cauchy_data(g: SpaceTimeGrid, rng: &mut impl Rng) -> CauchyData {
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let p0 = LateralTrace::new(g, draw(4 * (g.nx() - 1) * g.nt())).expect("ring length");
    let p1 = FaceTrace::new(g, draw(g.nx() * g.nt())).expect("face length");
    let f0 = random_nodal_field(g, Rank::Space, rng);
    CauchyData::with_f0_tilde(g, p0, p1, f0).expect("consistent grids")
}

/// Ten smooth functions compactly supported inside `Q_T`, vanishing on every
/// node the one-sided time stencils at `t = ±T` read when `nt ≥ 17`.
/// Supports are given as fractions of `Ω` and `(−T, T)`.
pub fn interior_suite(g: SpaceTimeGrid) -> Vec<ScalarField> {
    let bump = |s: f64, a: f64, b: f64| if s > a && s < b { ((s - a) * (b - s) * 4.0 / (b - a).powi(2)).powi(4) } else { 0.0 };
    let boxes = [
        ([0.1, 0.9], [0.1, 0.9], [-0.8, 0.8], 0.0),
        ([0.2, 0.8], [0.2, 0.8], [-0.5, 0.5], 1.0),
        ([0.1, 0.5], [0.1, 0.9], [-0.8, 0.2], 2.0),
        ([0.5, 0.9], [0.1, 0.9], [-0.2, 0.8], 3.0),
        ([0.1, 0.9], [0.1, 0.5], [-0.8, 0.0], 1.5),
        ([0.3, 0.7], [0.5, 0.9], [0.0, 0.8], 2.5),
        ([0.2, 0.6], [0.2, 0.6], [-0.6, 0.6], 4.0),
        ([0.4, 0.9], [0.3, 0.8], [-0.4, 0.8], 0.5),
        ([0.1, 0.7], [0.4, 0.9], [-0.8, -0.1], 3.5),
        ([0.25, 0.85], [0.15, 0.75], [-0.7, 0.7], 5.0),
    ];
    let (a, len, th) = (g.a(), g.b() - g.a(), g.t_half());
    boxes
        .iter()
        .map(|&(bx, by, bt, freq)| {
            ScalarField::from_fn(g, move |x, y, t| {
                let (sx, sy, st) = ((x - a) / len, (y - a) / len, t / th);
                bump(sx, bx[0], bx[1]) * bump(sy, by[0], by[1]) * bump(st, bt[0], bt[1]) * (1.0 + 0.5 * (freq * (sx + 2.0 * sy - st)).sin())
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{FaceTrace, LateralTrace};
    use approx::assert_relative_eq;

    fn grid(n: usize) -> SpaceTimeGrid {
        SpaceTimeGrid::new(1.0, 2.0, 1.0, n, n).unwrap()
    }

    #[test]
    fn cwf_values() {
        assert_eq!(cwf(0.0, 1.7, 0.3), 1.0);
        assert_relative_eq!(cwf(1.0, 2.0, 0.0), 8f64.exp(), max_relative = 1e-15);
        assert_eq!(cwf_normalized(1.0, 2.0, 0.0, 2.0), 1.0);
        assert_eq!(cwf(1.0, 1.0, 1.0), 1.0);
        for lam in [0.0, 8.0, 32.0] {
            let v = cwf_normalized(lam, 1.0, 1.0, 2.0);
            assert!(v.is_finite() && v <= 1.0);
        }
    }

    #[test]
    fn zero_field_zero_functional() {
        let g = grid(7);
        let data = CauchyData::zero(g);
        let drift = Drift::zero(g);
        let p = FunctionalParams::new(0.0);
        let w = ScalarField::zeros(g, Rank::SpaceTime);
        assert_eq!(functional_J(&w, &data, &drift, &p).unwrap(), 0.0);
        assert!(gradient_J(&w, &data, &drift, &p).unwrap().values().iter().all(|&v| v == 0.0));
        let f0 = ScalarField::from_fn_space(g, |x, y| (x * y).sin());
        let data = CauchyData::with_f0_tilde(g, LateralTrace::constant(g, 0.0), FaceTrace::from_fn(g, |_, _| 0.0), f0)
            .unwrap();
        assert_eq!(functional_J(&w, &data, &drift, &p).unwrap(), 0.0);
    }

    #[test]
    fn beta_term_gradient_is_gram() {
        let g = grid(7);
        let data = CauchyData::zero(g);
        let drift = Drift::zero(g);
        let mut p = FunctionalParams::new(0.0);
        p.lambda = 0.0;
        p.boundary_penalty = 0.0;
        let w = ScalarField::from_fn(g, |x, y, t| (x + 2.0 * y).sin() * (1.0 + t * t));
        let f = Functional::new(&data, &drift, p).unwrap();
        let (_, grad) = f.value_and_gradient(w.values()).unwrap();
        let gram = crate::grid::sobolev_gram(&w, 3).unwrap();
        // Remove the residual contribution by differencing against β = 0.
        let mut p0 = p;
        p0.beta = 0.0;
        let (_, grad0) = Functional::new(&data, &drift, p0).unwrap().value_and_gradient(w.values()).unwrap();
        for n in 0..grad.len() {
            assert_relative_eq!(grad[n] - grad0[n], 2.0 * p.beta * gram.values()[n], epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn time_unit_rescales_time_derivatives() {
        let g = SpaceTimeGrid::new(1.0, 2.0, 0.5, 7, 9).unwrap();
        let data = CauchyData::zero(g);
        let drift = Drift::zero(g);
        let mut p = FunctionalParams::new(0.0);
        p.lambda = 0.0;
        p.boundary_penalty = 0.0;
        let w = ScalarField::from_fn(g, |_, _, t| t);
        let plain = Functional::new(&data, &drift, p).unwrap().terms(w.values()).unwrap();
        p.time_unit = 0.25;
        let scaled = Functional::new(&data, &drift, p).unwrap().terms(w.values()).unwrap();
        // Only the (∂_t w)² = 1 term changes: by β·(u² − 1)·vol(Q_T), vol = 1·1·1.
        assert_relative_eq!(plain.regularization - scaled.regularization, p.beta * (1.0 - 0.0625), max_relative = 1e-12);
        assert_eq!(plain.residual, scaled.residual);
        p.time_unit = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn interior_suite_vanishes_near_the_boundary() {
        let g = SpaceTimeGrid::new(1.0, 2.0, 1.0, 33, 33).unwrap();
        let suite = interior_suite(g);
        assert_eq!(suite.len(), 10);
        for u in &suite {
            assert!(u.max_abs() > 0.0);
            for i in 0..33 {
                for j in 0..33 {
                    for k in [0, 1, 2, 30, 31, 32] {
                        assert_eq!(u.at(i, j, k), 0.0);
                    }
                    for m in [0, 32] {
                        assert_eq!(u.at(m, i, j), 0.0);
                        assert_eq!(u.at(i, m, j), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn lemma_zero_and_constant() {
        let g = SpaceTimeGrid::new(1.0, 2.0, 1.0, 17, 17).unwrap();
        let r = check_volterra_lemma(&ScalarField::zeros(g, Rank::SpaceTime), 1.0, 0.0).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        let r = check_volterra_lemma(&ScalarField::constant(g, Rank::SpaceTime, 1.0), 1.0, 0.0).unwrap();
        assert!(r.lhs < r.rhs, "{r:?}");
        assert!(r.line(0.02).starts_with("LEMMA1 pass"));
        assert!(check_volterra_lemma(&ScalarField::zeros(g, Rank::SpaceTime), 0.5, 0.0).is_err());
    }

    #[test]
    fn carleman_zero_and_bump() {
        let g = SpaceTimeGrid::new(1.0, 2.0, 1.0, 33, 33).unwrap();
        let r = check_carleman_estimate(&ScalarField::zeros(g, Rank::SpaceTime), 2.0).unwrap();
        assert_eq!((r.i_res, r.i_2, r.i_1, r.i_bdry), (0.0, 0.0, 0.0, 0.0));
        let bump = |s: f64, a: f64, b: f64| if s > a && s < b { ((s - a) * (b - s)).powi(4) } else { 0.0 };
        let u = ScalarField::from_fn(g, |x, y, t| bump(x, 1.2, 1.9) * bump(y, 1.1, 1.8) * bump(t, -0.6, 0.7));
        let r = check_carleman_estimate(&u, 2.0).unwrap();
        assert!(r.c_hat.unwrap() > 0.0);
        assert!(r.line().starts_with("CARLEMAN pass lambda=2 Chat="));
    }

    #[test]
    fn convexity_gap_of_constant_pair() {
        let g = grid(7);
        let data = CauchyData::zero(g);
        let drift = Drift::zero(g);
        let mut p = FunctionalParams::new(0.0);
        p.boundary_penalty = 0.0;
        let w1 = ScalarField::constant(g, Rank::SpaceTime, 0.3);
        let w2 = ScalarField::constant(g, Rank::SpaceTime, -1.1);
        let r = check_convexity_gap(&w1, &w2, &data, &drift, &p).unwrap();
        // K vanishes on constants, so the gap is β‖h‖² = β·1.4²·vol(Q_T).
        assert_relative_eq!(r.gap, p.beta * 1.4 * 1.4 * 2.0, max_relative = 1e-12);
        assert_relative_eq!(r.bound, 0.5 * r.gap, max_relative = 1e-12);
        let r = check_convexity_gap(&w1, &w1, &data, &drift, &p).unwrap();
        assert!(r.gap.abs() < 1e-15);
        assert_eq!(r.bound, 0.0);
    }

    #[test]
    fn schedule_arithmetic() {
        let s = theory_schedule(0.1, 0.05, 1.0, 2.0, 4.0).unwrap();
        assert_relative_eq!(s.eta1, 0.01 * 16.0 + 3.0, epsilon = 1e-12);
        assert_relative_eq!(s.eta2, 0.97 * 16.0 - 9.0, epsilon = 1e-12);
        assert_eq!(s.rho, 0.5);
        assert_relative_eq!(s.lambda_of_delta, 20f64.ln() / 3.16, max_relative = 1e-14);
        assert_relative_eq!(s.beta_of_delta, 2.0 * (-16.0 * s.lambda_of_delta).exp(), max_relative = 1e-14);
        assert!(s.below_lambda1);
        let s = theory_schedule(0.1, 1.0 - 1e-9, 1.0, 2.0, 4.0).unwrap();
        assert!(s.lambda_of_delta > 0.0 && s.lambda_of_delta < 1e-8 && s.below_lambda1);
        match theory_schedule(0.1, 0.05, 1.0, 2.0, 1.0) {
            Err(Error::InadmissibleGeometry { t_min, t_min_gamma, .. }) => {
                assert_eq!(t_min, 3.0);
                assert_relative_eq!(t_min_gamma, (9.0f64 / 0.97).sqrt(), max_relative = 1e-15);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        use rand::{Rng, SeedableRng};
        let g = SpaceTimeGrid::new(1.0, 2.0, 0.5, 7, 9).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut field = |rank| {
            let n = g.len(rank);
            ScalarField::new(g, rank, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let w = field(Rank::SpaceTime);
        let h = field(Rank::SpaceTime);
        let drift = Drift { b1: field(Rank::Space), b2: field(Rank::Space) };
        let f0 = field(Rank::Space);
        let p0 = LateralTrace::from_fn(g, |x, y, t| x * y - t);
        let p1 = FaceTrace::from_fn(g, |y, t| y * t);
        let data = CauchyData::with_f0_tilde(g, p0, p1, f0).unwrap();
        let mut p = FunctionalParams::new(0.25);
        p.boundary_penalty = 3.0;
        let f = Functional::new(&data, &drift, p).unwrap();
        let (_, grad) = f.value_and_gradient(w.values()).unwrap();
        let eps = 1e-5;
        let shift = |s: f64| -> Vec<f64> { w.values().iter().zip(h.values()).map(|(a, b)| a + s * b).collect() };
        let fd = (f.value(&shift(eps)).unwrap() - f.value(&shift(-eps)).unwrap()) / (2.0 * eps);
        let an: f64 = grad.iter().zip(h.values()).map(|(a, b)| a * b).sum();
        assert!(((an - fd) / (an.abs() + 1e-12)).abs() < 1e-6, "{an} vs {fd}");
    }
}
