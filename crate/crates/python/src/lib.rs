//! Python bindings: grids, fields, scenarios, simulation, inversion and the
//! theory checks.

use convexify::carleman::{
    check_carleman_estimate, check_volterra_lemma, theory_schedule, Functional, FunctionalParams,
};
use convexify::formats::{read_cfld, read_cmeas, write_cfld, write_cmeas};
use convexify::forward::{solve_forward, Drift, MeasurementData, ParabolicProblem};
use convexify::inverse::{reconstruction_error, Method, Projection, ReconstructionMode, ReconstructionReport};
use convexify::phantoms::{scenario as frozen_scenario, standard_boundary, standard_initial, Letter, Scenario, ScenarioId};
use convexify::pipeline::{run_inversion, simulate_phantom, InversionConfig, SimulatedCase};
use convexify::transform::derive_cauchy;
use convexify::{grid, Error, Rank, ScalarField, SpaceTimeGrid};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: Error) -> PyErr {
    match e {
        Error::Solve { .. } | Error::Nonpositive { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Uniform grid on `(A, B)² × [−T, T]`.
#[pyclass(name = "Grid", frozen)]
#[derive(Clone, Copy)]
pub struct PyGrid(SpaceTimeGrid);

#[pymethods]
impl PyGrid {
    #[new]
    fn new(a: f64, b: f64, t: f64, nx: usize, nt: usize) -> PyResult<Self> {
        SpaceTimeGrid::new(a, b, t, nx, nt).map(Self).map_err(err)
    }

    #[getter]
    fn a(&self) -> f64 {
        self.0.a()
    }
    #[getter]
    fn b(&self) -> f64 {
        self.0.b()
    }
    #[getter]
    fn t(&self) -> f64 {
        self.0.t_half()
    }
    #[getter]
    fn nx(&self) -> usize {
        self.0.nx()
    }
    #[getter]
    fn nt(&self) -> usize {
        self.0.nt()
    }
    #[getter]
    fn hx(&self) -> f64 {
        self.0.hx()
    }
    #[getter]
    fn ht(&self) -> f64 {
        self.0.ht()
    }

    fn __repr__(&self) -> String {
        let g = &self.0;
        format!("Grid(a={}, b={}, t={}, nx={}, nt={})", g.a(), g.b(), g.t_half(), g.nx(), g.nt())
    }
}

/// Nodal values on a grid, flat in `(i·nx + j)·nt + k` order; a space-only
/// field has one value per `(i, j)`.
#[pyclass(name = "Field", frozen)]
#[derive(Clone)]
pub struct PyField(ScalarField);

#[pymethods]
impl PyField {
    #[new]
    #[pyo3(signature = (grid, values, space_time = true))]
    fn new(grid: &PyGrid, values: Vec<f64>, space_time: bool) -> PyResult<Self> {
        let rank = if space_time { Rank::SpaceTime } else { Rank::Space };
        ScalarField::new(grid.0, rank, values).map(Self).map_err(err)
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(*self.0.grid())
    }
    #[getter]
    fn space_time(&self) -> bool {
        self.0.rank() == Rank::SpaceTime
    }
    #[getter]
    fn shape(&self) -> Vec<usize> {
        let d = self.0.dims();
        if self.space_time() {
            d.to_vec()
        } else {
            d[..2].to_vec()
        }
    }
    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    #[pyo3(signature = (i, j, k = 0))]
    fn at(&self, i: usize, j: usize, k: usize) -> PyResult<f64> {
        let d = self.0.dims();
        if i >= d[0] || j >= d[1] || k >= d[2] {
            return Err(PyValueError::new_err(format!("index ({i}, {j}, {k}) outside {d:?}")));
        }
        Ok(if self.space_time() { self.0.at(i, j, k) } else { self.0.at_s(i, j) })
    }

    fn min(&self) -> f64 {
        self.0.min()
    }
    fn max(&self) -> f64 {
        self.0.max()
    }

    /// Squared discrete `H^k` norm.
    fn sobolev_norm_sq(&self, k: u8) -> PyResult<f64> {
        grid::sobolev_norm_sq(&self.0, k).map_err(err)
    }

    fn to_cfld(&self) -> String {
        write_cfld(&self.0)
    }

    #[staticmethod]
    fn from_cfld(text: &str) -> PyResult<Self> {
        read_cfld(text).map(Self).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.values().len()
    }
}

/// `g1` on the face `x1 = B` and the slice `f0 = u(·, t0)`.
#[pyclass(name = "Measurements", frozen)]
#[derive(Clone)]
pub struct PyMeasurements(MeasurementData);

#[pymethods]
impl PyMeasurements {
    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(self.0.grid)
    }
    #[getter]
    fn t0(&self) -> f64 {
        self.0.t0
    }
    /// `g1[j·nt + k]`.
    #[getter]
    fn g1(&self) -> Vec<f64> {
        self.0.g1.values().to_vec()
    }
    #[getter]
    fn f0(&self) -> PyField {
        PyField(self.0.f0.clone())
    }

    #[pyo3(signature = (comments = Vec::new()))]
    fn to_cmeas(&self, comments: Vec<String>) -> String {
        write_cmeas(&self.0, &comments)
    }

    #[staticmethod]
    fn from_cmeas(text: &str) -> PyResult<Self> {
        read_cmeas(text).map(Self).map_err(err)
    }
}

/// A frozen reference configuration; every attribute can be overridden.
#[pyclass(name = "Scenario")]
#[derive(Clone)]
pub struct PyScenario(Scenario);

#[pymethods]
impl PyScenario {
    #[new]
    #[pyo3(signature = (name = "test1_T1", paper_fine = false))]
    fn new(name: &str, paper_fine: bool) -> PyResult<Self> {
        let id = ScenarioId::from_name(name).map_err(err)?;
        Ok(Self(frozen_scenario(id, paper_fine)))
    }

    #[staticmethod]
    fn names() -> Vec<&'static str> {
        ScenarioId::ALL.iter().map(|s| s.name()).collect()
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.0.id.name()
    }
    #[getter]
    fn t0(&self) -> f64 {
        self.0.t0
    }
    #[getter]
    fn fine(&self) -> PyGrid {
        PyGrid(self.0.fine)
    }
    #[getter]
    fn inversion(&self) -> PyGrid {
        PyGrid(self.0.inversion)
    }
    #[setter]
    fn set_fine(&mut self, g: PyGrid) -> PyResult<()> {
        if !g.0.same_extent(&self.0.fine) {
            return Err(PyValueError::new_err("the forward grid must cover the scenario box"));
        }
        self.0.fine = g.0;
        Ok(())
    }

    #[getter(lambda_)]
    fn get_lambda(&self) -> f64 {
        self.0.lambda
    }
    #[setter(lambda_)]
    fn set_lambda(&mut self, v: f64) {
        self.0.lambda = v;
    }
    #[getter]
    fn get_beta(&self) -> f64 {
        self.0.beta
    }
    #[setter]
    fn set_beta(&mut self, v: f64) {
        self.0.beta = v;
    }
    #[getter]
    fn get_sigma(&self) -> f64 {
        self.0.sigma
    }
    #[setter]
    fn set_sigma(&mut self, v: f64) {
        self.0.sigma = v;
    }
    #[getter]
    fn get_seed(&self) -> u64 {
        self.0.seed
    }
    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.0.seed = v;
    }
    #[getter]
    fn get_amplitude(&self) -> f64 {
        self.0.amplitude
    }
    #[setter]
    fn set_amplitude(&mut self, v: f64) {
        self.0.amplitude = v;
    }
    #[getter]
    fn get_background(&self) -> f64 {
        self.0.background
    }
    #[setter]
    fn set_background(&mut self, v: f64) {
        self.0.background = v;
    }
    #[getter]
    fn get_grad_tol(&self) -> f64 {
        self.0.grad_tol
    }
    #[setter]
    fn set_grad_tol(&mut self, v: f64) {
        self.0.grad_tol = v;
    }

    fn serialize(&self) -> String {
        self.0.serialize()
    }
    fn digest(&self) -> String {
        self.0.digest()
    }
}

/// Output of [`simulate`].
#[pyclass(name = "SimulatedCase", frozen)]
pub struct PyCase(SimulatedCase);

#[pymethods]
impl PyCase {
    #[getter]
    fn data(&self) -> PyMeasurements {
        PyMeasurements(self.0.data.clone())
    }
    #[getter]
    fn clean(&self) -> PyMeasurements {
        PyMeasurements(self.0.clean.clone())
    }
    #[getter]
    fn c_true(&self) -> PyField {
        PyField(self.0.c_true.clone())
    }
    #[getter]
    fn min_u(&self) -> f64 {
        self.0.min_u
    }
}

#[pyclass(name = "Reconstruction", frozen)]
pub struct PyReport(ReconstructionReport);

#[pymethods]
impl PyReport {
    #[getter]
    fn c_comp(&self) -> PyField {
        PyField(self.0.c_comp.clone())
    }
    #[getter]
    fn w_min(&self) -> PyField {
        PyField(self.0.w_min.clone())
    }
    #[getter]
    fn iterations(&self) -> usize {
        self.0.iterations
    }
    #[getter]
    fn j_trace(&self) -> Vec<f64> {
        self.0.j_trace.clone()
    }
    #[getter]
    fn converged(&self) -> bool {
        self.0.converged()
    }
    #[getter]
    fn rel_l2_error(&self) -> Option<f64> {
        self.0.rel_l2_error
    }
    fn manifest(&self) -> String {
        self.0.manifest()
    }
}

fn letter(name: &str) -> PyResult<Letter> {
    Letter::from_name(name).map_err(err)
}

/// Forward run for one letter phantom under `scenario`.
#[pyfunction]
#[pyo3(signature = (scenario, letter_name = "A"))]
fn simulate(py: Python<'_>, scenario: &PyScenario, letter_name: &str) -> PyResult<PyCase> {
    let sc = scenario.0.clone();
    let phantom = sc.phantom(letter(letter_name)?);
    py.detach(|| simulate_phantom(&sc, phantom)).map(PyCase).map_err(err)
}

/// Minimizes the functional for `data` and reconstructs the coefficient.
/// Settings default to the scenario's when one is given.
#[pyfunction]
#[pyo3(signature = (
    data, scenario = None, *, lambda_ = None, beta = None, max_iters = None, grad_tol = None,
    method = "lbfgs", mode = "slice", gamma = 0.3, project_ball = None, truth = None
))]
#[allow(clippy::too_many_arguments)]
fn invert(
    py: Python<'_>,
    data: &PyMeasurements,
    scenario: Option<&PyScenario>,
    lambda_: Option<f64>,
    beta: Option<f64>,
    max_iters: Option<usize>,
    grad_tol: Option<f64>,
    method: &str,
    mode: &str,
    gamma: f64,
    project_ball: Option<f64>,
    truth: Option<&PyField>,
) -> PyResult<PyReport> {
    let mut cfg = match scenario {
        Some(s) => InversionConfig::from_scenario(&s.0),
        None => {
            let mut sc = frozen_scenario(ScenarioId::Test1T1, false);
            sc.t0 = data.0.t0;
            sc.time_unit = data.0.grid.t_half();
            InversionConfig::from_scenario(&sc)
        }
    };
    if let Some(v) = lambda_ {
        cfg.params.lambda = v;
    }
    if let Some(v) = beta {
        cfg.params.beta = v;
    }
    if let Some(v) = max_iters {
        cfg.opts.max_iters = v;
    }
    if let Some(v) = grad_tol {
        cfg.opts.grad_tol = v;
    }
    cfg.opts.method = match method {
        "lbfgs" => Method::Lbfgs,
        "sd" => Method::SteepestDescent,
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    };
    cfg.mode = match mode {
        "slice" => ReconstructionMode::Slice,
        "average" => ReconstructionMode::Average { gamma },
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    };
    if let Some(radius) = project_ball {
        cfg.opts.projection = Projection::Ball { radius, k: cfg.params.k };
        cfg.params.radius = radius;
    }
    let m = data.0.clone();
    let truth = truth.map(|t| t.0.clone());
    py.detach(|| run_inversion(&m, &cfg, truth.as_ref())).map(|r| PyReport(r.report)).map_err(err)
}

/// The Carleman-weighted functional for noise-free data with `g0 = 1`.
#[pyclass(name = "Functional", frozen)]
pub struct PyFunctional(Functional);

#[pymethods]
impl PyFunctional {
    #[new]
    #[pyo3(signature = (data, lambda_ = 1.0, beta = 0.01, k = 3, boundary_penalty = 1e3, time_unit = None))]
    fn new(
        data: &PyMeasurements,
        lambda_: f64,
        beta: f64,
        k: u8,
        boundary_penalty: f64,
        time_unit: Option<f64>,
    ) -> PyResult<Self> {
        let m = &data.0;
        let g = m.grid;
        let g0 = convexify::forward::LateralTrace::constant(g, 1.0);
        let cauchy = derive_cauchy(&g, &g0, &m.g1, &m.f0, convexify::transform::DerivativeRule::Stencil)
            .map_err(err)?;
        let mut params = FunctionalParams::new(m.t0);
        params.lambda = lambda_;
        params.beta = beta;
        params.k = k;
        params.boundary_penalty = boundary_penalty;
        params.time_unit = time_unit.unwrap_or(g.t_half());
        Functional::new(&cauchy, &Drift::zero(g), params).map(Self).map_err(err)
    }

    fn value(&self, w: &PyField) -> PyResult<f64> {
        self.0.value(w.0.values()).map_err(err)
    }

    /// `(J(w), ∇J(w))`.
    fn value_and_gradient(&self, w: &PyField) -> PyResult<(f64, PyField)> {
        let (j, grad) = self.0.value_and_gradient(w.0.values()).map_err(err)?;
        let grad = ScalarField::new(*self.0.grid(), Rank::SpaceTime, grad).map_err(err)?;
        Ok((j, PyField(grad)))
    }
}

/// Solves `u_t = Δu − c u` with the standard initial and boundary data.
#[pyfunction]
fn solve(py: Python<'_>, c: &PyField, grid: &PyGrid) -> PyResult<PyField> {
    let g = grid.0;
    let c = c.0.clone();
    py.detach(|| {
        let p = ParabolicProblem::new(
            g,
            c,
            Drift::zero(g),
            standard_initial(&g)?,
            standard_boundary(&g)?,
            Some(1.0),
        )?;
        solve_forward(&p)
    })
    .map(PyField)
    .map_err(err)
}

/// `(lhs, rhs)` of the weighted Volterra estimate.
#[pyfunction]
fn volterra_lemma(q: &PyField, lambda_: f64, t0: f64) -> PyResult<(f64, f64)> {
    let r = check_volterra_lemma(&q.0, lambda_, t0).map_err(err)?;
    Ok((r.lhs, r.rhs))
}

/// The estimated Carleman constant for `u`, or `None` when undefined.
#[pyfunction]
fn carleman_constant(u: &PyField, lambda_: f64) -> PyResult<Option<f64>> {
    check_carleman_estimate(&u.0, lambda_).map(|r| r.c_hat).map_err(err)
}

/// `(lambda, beta)` from the parameter schedule.
#[pyfunction]
fn schedule(gamma: f64, delta: f64, a: f64, b: f64, t: f64) -> PyResult<(f64, f64)> {
    let s = theory_schedule(gamma, delta, a, b, t).map_err(err)?;
    Ok((s.lambda_of_delta, s.beta_of_delta))
}

#[pyfunction]
fn relative_error(c_comp: &PyField, c_true: &PyField) -> PyResult<f64> {
    reconstruction_error(&c_comp.0, &c_true.0).map_err(err)
}

#[pymodule]
#[pyo3(name = "convexify")]
fn convexify_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyField>()?;
    m.add_class::<PyMeasurements>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyCase>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyFunctional>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(invert, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(volterra_lemma, m)?)?;
    m.add_function(wrap_pyfunction!(carleman_constant, m)?)?;
    m.add_function(wrap_pyfunction!(schedule, m)?)?;
    m.add_function(wrap_pyfunction!(relative_error, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
