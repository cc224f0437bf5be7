//! End-to-end runs: simulate data for a phantom, optionally add noise,
//! invert and compare against the truth.

use crate::carleman::FunctionalParams;
use crate::error::Result;
use crate::forward::{simulate_measurements, Drift, LateralTrace, MeasurementData, ParabolicProblem};
use crate::grid::ScalarField;
use crate::inverse::{invert, MinimizerOptions, ReconstructionMode, ReconstructionReport};
use crate::noise::{add_noise, smooth, NoiseConfig, SmoothingReport};
use crate::phantoms::{standard_boundary, standard_initial, Letter, Phantom, Scenario};
use crate::transform::{derive_cauchy, DerivativeRule};

/// Everything the inversion needs besides the measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct InversionConfig {
    pub params: FunctionalParams,
    pub opts: MinimizerOptions,
    pub mode: ReconstructionMode,
    pub rule: DerivativeRule,
    /// Constant Dirichlet level on the lateral boundary.
    pub g0: f64,
    /// Smooth the data before differentiating; `None` uses them raw.
    pub smoothing: Option<NoiseConfig>,
}

impl InversionConfig {
    pub fn from_scenario(s: &Scenario) -> Self {
        let params = FunctionalParams {
            lambda: s.lambda,
            beta: s.beta,
            k: s.k,
            t0: s.t0,
            boundary_penalty: s.boundary_penalty,
            radius: 1e3,
            time_unit: s.time_unit,
        };
        let noisy = s.sigma > 0.0;
        Self {
            params,
            opts: MinimizerOptions { grad_tol: s.grad_tol, ..Default::default() },
            mode: ReconstructionMode::Slice,
            rule: if noisy { DerivativeRule::Spline } else { DerivativeRule::Stencil },
            g0: 1.0,
            smoothing: noisy.then(|| NoiseConfig::new(s.sigma, s.seed, None).expect("scenario sigma in range")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inversion {
    pub report: ReconstructionReport,
    pub smoothing: Option<SmoothingReport>,
}

pub fn run_inversion(m: &MeasurementData, cfg: &InversionConfig, c_true: Option<&ScalarField>) -> Result<Inversion> {
    let (m, smoothing) = match &cfg.smoothing {
        Some(nc) => {
            let (s, r) = smooth(m, nc);
            (s, Some(r))
        }
        None => (m.clone(), None),
    };
    let g = m.grid;
    let g0 = LateralTrace::constant(g, cfg.g0);
    let data = derive_cauchy(&g, &g0, &m.g1, &m.f0, cfg.rule)?;
    let mut params = cfg.params;
    params.t0 = m.t0;
    let report = invert(&data, &Drift::zero(g), &params, &cfg.opts, cfg.mode, c_true)?;
    Ok(Inversion { report, smoothing })
}

/// Forward run for one phantom on the scenario's fine grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedCase {
    pub phantom: Phantom,
    /// The coefficient on the inversion grid.
    pub c_true: ScalarField,
    pub clean: MeasurementData,
    pub data: MeasurementData,
    pub min_u: f64,
}

pub fn simulate_case(s: &Scenario, letter: Letter) -> Result<SimulatedCase> {
    simulate_phantom(s, s.phantom(letter))
}

pub fn simulate_phantom(s: &Scenario, phantom: Phantom) -> Result<SimulatedCase> {
    let fine = s.fine;
    let p = ParabolicProblem::new(
        fine,
        phantom.coefficient(&fine),
        Drift::zero(fine),
        standard_initial(&fine)?,
        standard_boundary(&fine)?,
        Some(1.0),
    )?;
    let sim = simulate_measurements(&p, &s.inversion, s.t0, s.f0_nx)?;
    let data = if s.sigma > 0.0 {
        add_noise(&sim.data, &NoiseConfig::new(s.sigma, s.seed, None)?)
    } else {
        sim.data.clone()
    };
    Ok(SimulatedCase { c_true: phantom.coefficient(&s.inversion), phantom, clean: sim.data, data, min_u: sim.min_u })
}

/// Pearson correlation of two fields over their nodes.
pub fn correlation(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.ensure_compatible(b)?;
    let n = a.values().len() as f64;
    let ma = a.values().iter().sum::<f64>() / n;
    let mb = b.values().iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values().iter().zip(b.values()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    Ok(if saa > 0.0 && sbb > 0.0 { sab / (saa * sbb).sqrt() } else { 0.0 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub case: SimulatedCase,
    pub inversion: Inversion,
    pub rel_error: f64,
    pub mask_correlation: f64,
}

pub fn run_case(s: &Scenario, letter: Letter, cfg: &InversionConfig) -> Result<CaseResult> {
    let case = simulate_case(s, letter)?;
    let inversion = run_inversion(&case.data, cfg, Some(&case.c_true))?;
    let mask = case.phantom.mask_on(&s.inversion);
    let mask_correlation = correlation(&inversion.report.c_comp, &mask)?;
    let rel_error = inversion.report.rel_l2_error.expect("reference supplied");
    Ok(CaseResult { case, inversion, rel_error, mask_correlation })
}
