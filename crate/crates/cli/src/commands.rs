use std::fmt;
use std::fs;
use std::path::Path;

use convexify::carleman::{
    check_carleman_estimate, check_convexity_gap, check_volterra_lemma, interior_suite, random_cauchy_data,
    random_smooth_field, theory_schedule, FunctionalParams,
};
use convexify::formats::{pgm_sidecar, read_cfld, read_cmeas, write_cfld, write_cmeas, write_field_csv, write_pgm};
use convexify::forward::{solve_forward, Drift, ParabolicProblem};
use convexify::grid::{sobolev_norm_sq, ScalarField, SpaceTimeGrid};
use convexify::inverse::MinimizerOptions;
use convexify::noise::{NoiseConfig, RNG_ALGORITHM};
use convexify::phantoms::{scenario, standard_boundary, standard_initial, Letter, Scenario, ScenarioId};
use convexify::pipeline::{run_case, run_inversion, simulate_phantom, CaseResult, InversionConfig};
use convexify::transform::DerivativeRule;
use convexify::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::settings::Settings;

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_VERIFY: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;
pub const EXIT_INPUT: u8 = 4;

const DEFAULT_SEED: u64 = 20_190_601;

#[derive(Debug)]
pub enum Failure {
    Verification(String),
    NotConverged(String),
    Input(Error),
    Runtime(Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Verification(_) => EXIT_VERIFY,
            Failure::NotConverged(_) => EXIT_NOT_CONVERGED,
            Failure::Input(_) => EXIT_INPUT,
            Failure::Runtime(_) => EXIT_OTHER,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Verification(m) => write!(f, "verification failed: {m}"),
            Failure::NotConverged(m) => write!(f, "not converged: {m}"),
            Failure::Input(e) | Failure::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Solve { .. } | Error::Nonpositive { .. } => Failure::Runtime(e),
            _ => Failure::Input(e),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn missing(key: &str) -> Failure {
    Failure::Input(Error::Parse { offset: 0, reason: format!("missing setting {key:?}") })
}

fn write(dir: &Path, name: &str, text: &str) -> convexify::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), text)?;
    Ok(())
}

/// CFLD, PGM heatmap with its value sidecar, and CSV for one space field.
fn write_space_field(dir: &Path, stem: &str, f: &ScalarField) -> convexify::Result<()> {
    write(dir, &format!("{stem}.cfld"), &write_cfld(f))?;
    write(dir, &format!("{stem}.pgm"), &write_pgm(f)?)?;
    write(dir, &format!("{stem}.pgm.txt"), &pgm_sidecar(f)?)?;
    write(dir, &format!("{stem}.csv"), &write_field_csv(f)?)
}

fn manifest(s: &Settings, command: &str, extra: &[(String, String)]) -> String {
    let mut m = s.render();
    let seed = s.get("seed").map(str::to_string).unwrap_or_else(|| DEFAULT_SEED.to_string());
    for (k, v) in [
        ("command", command.to_string()),
        ("config_hash", s.hash()),
        ("seed", seed),
        ("version", env!("CARGO_PKG_VERSION").to_string()),
        ("rng", RNG_ALGORITHM.to_string()),
    ] {
        m += &format!("provenance.{k}={v}\n");
    }
    for (k, v) in extra {
        m += &format!("{k}={v}\n");
    }
    m
}

fn result_lines(prefix: &str, body: &str) -> Vec<(String, String)> {
    body.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (format!("result.{prefix}{k}"), v.to_string()))
        .collect()
}

fn resolve_scenario(s: &Settings, id: ScenarioId) -> convexify::Result<Scenario> {
    let paper_fine = s.bool("paper_fine")?;
    if paper_fine {
        eprintln!("warning: --paper-fine runs the forward solver on 641 x 641 x 513 nodes; expect hours and several GB");
    }
    let mut sc = scenario(id, paper_fine);
    sc.sigma = s.or("sigma", sc.sigma)?;
    sc.seed = s.or("seed", sc.seed)?;
    sc.lambda = s.or("lambda", sc.lambda)?;
    sc.beta = s.or("beta", sc.beta)?;
    sc.grad_tol = s.or("grad_tol", sc.grad_tol)?;
    sc.time_unit = s.or("time_unit", sc.time_unit)?;
    sc.amplitude = s.or("amplitude", sc.amplitude)?;
    sc.background = s.or("background", sc.background)?;
    let (nx, nt) = (s.or("fine_nx", sc.fine.nx())?, s.or("fine_nt", sc.fine.nt())?);
    if (nx, nt) != (sc.fine.nx(), sc.fine.nt()) {
        sc.fine = SpaceTimeGrid::new(sc.fine.a(), sc.fine.b(), sc.fine.t_half(), nx, nt)?;
    }
    Ok(sc)
}

fn scenario_inversion(s: &Settings, sc: &Scenario) -> convexify::Result<InversionConfig> {
    let mut cfg = InversionConfig::from_scenario(sc);
    cfg.mode = s.mode()?;
    cfg.opts.method = s.method()?;
    cfg.opts.max_iters = s.or("max_iters", cfg.opts.max_iters)?;
    cfg.opts.projection = s.projection(sc.k)?;
    if let Some(r) = s.parsed("project_ball")? {
        cfg.params.radius = r;
    }
    Ok(cfg)
}

pub fn simulate(s: &Settings) -> Outcome {
    let id = ScenarioId::from_name(s.get("scenario").unwrap_or("test1_T1"))?;
    let letter = Letter::from_name(s.get("letter").unwrap_or("A"))?;
    let mut s = s.clone();
    s.set("scenario", id.name())?;
    s.set("letter", letter.name())?;
    let s = &s;
    let sc = resolve_scenario(s, id)?;
    let phantom = sc.phantom(letter.clone());
    let out = s.out_dir();
    eprintln!("simulating {} / {} on {}x{}x{}", id.name(), letter.name(), sc.fine.nx(), sc.fine.nx(), sc.fine.nt());
    let case = simulate_phantom(&sc, phantom.clone())?;
    let comments = vec![
        format!("scenario={} letter={}", id.name(), letter.name()),
        format!("sigma={} seed={}", sc.sigma, sc.seed),
        format!("rng={RNG_ALGORITHM}"),
    ];
    write(&out, "measurements.cmeas", &write_cmeas(&case.data, &comments))?;
    write_space_field(&out, "c_true", &case.c_true)?;
    if s.bool("full_field")? {
        let fine = sc.fine;
        let p = ParabolicProblem::new(
            fine,
            phantom.coefficient(&fine),
            Drift::zero(fine),
            standard_initial(&fine)?,
            standard_boundary(&fine)?,
            Some(1.0),
        )?;
        write(&out, "u.cfld", &write_cfld(&solve_forward(&p)?))?;
    }
    let extra = vec![
        ("provenance.scenario_digest".to_string(), sc.digest()),
        ("result.min_u".to_string(), format!("{:.17e}", case.min_u)),
    ];
    write(&out, "manifest.txt", &manifest(s, "simulate", &extra))?;
    println!("wrote {}", out.join("measurements.cmeas").display());
    Ok(())
}

pub fn invert(s: &Settings) -> Outcome {
    let input = s.path("input").ok_or_else(|| missing("input"))?;
    let m = read_cmeas(&fs::read_to_string(&input).map_err(Error::from)?)?;
    let truth = match s.path("truth") {
        Some(p) => Some(read_cfld(&fs::read_to_string(p).map_err(Error::from)?)?),
        None => None,
    };
    let mut params = FunctionalParams::new(m.t0);
    params.lambda = s.or("lambda", params.lambda)?;
    params.beta = s.or("beta", params.beta)?;
    params.time_unit = s.or("time_unit", m.grid.t_half())?;
    if let Some(r) = s.parsed("project_ball")? {
        params.radius = r;
    }
    let opts = MinimizerOptions {
        method: s.method()?,
        grad_tol: s.or("grad_tol", 1e-2)?,
        max_iters: s.or("max_iters", 5000)?,
        projection: s.projection(params.k)?,
        ..Default::default()
    };
    let sigma: f64 = s.or("sigma", 0.0)?;
    let smoothing = if sigma > 0.0 { Some(NoiseConfig::new(sigma, s.or("seed", DEFAULT_SEED)?, None)?) } else { None };
    let cfg = InversionConfig {
        params,
        opts,
        mode: s.mode()?,
        rule: if smoothing.is_some() { DerivativeRule::Spline } else { DerivativeRule::Stencil },
        g0: 1.0,
        smoothing,
    };
    eprintln!("inverting {} ({}x{}x{})", input.display(), m.grid.nx(), m.grid.nx(), m.grid.nt());
    let inv = run_inversion(&m, &cfg, truth.as_ref())?;
    let r = &inv.report;
    let out = s.out_dir();
    write_space_field(&out, "c_comp", &r.c_comp)?;
    let mut trace = String::from("iteration,J\n");
    for (i, j) in r.j_trace.iter().enumerate() {
        trace += &format!("{i},{j:.17e}\n");
    }
    write(&out, "j_trace.csv", &trace)?;
    let mut extra = result_lines("", &r.manifest());
    if let Some(sm) = inv.smoothing {
        extra.push(("result.smoother_g1".into(), format!("{:e}", sm.g1_strength)));
        extra.push(("result.smoother_f0".into(), format!("{:e}", sm.f0_strength)));
    }
    write(&out, "manifest.txt", &manifest(s, "invert", &extra))?;
    println!(
        "iterations={} final_J={:.6e} converged={}{}",
        r.iterations,
        r.j_trace.last().copied().unwrap_or(f64::NAN),
        r.converged(),
        r.rel_l2_error.map(|e| format!(" rel_l2_error={e:.4}")).unwrap_or_default()
    );
    if !r.converged() {
        return Err(Failure::NotConverged(format!("{:?} after {} iterations", r.stop, r.iterations)));
    }
    Ok(())
}

fn scaled_to(f: ScalarField, radius: f64) -> ScalarField {
    let n = sobolev_norm_sq(&f, 3).map(f64::sqrt).unwrap_or(0.0);
    if n > 0.0 {
        f.scale(radius / n)
    } else {
        f
    }
}

pub fn verify(s: &Settings) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(s.or("seed", DEFAULT_SEED)?);
    let (mut passed, mut total) = (0usize, 0usize);
    let mut tally = |ok: bool, line: String| {
        println!("{line}");
        total += 1;
        passed += ok as usize;
    };

    let g = SpaceTimeGrid::new(1.0, 2.0, 1.0, 17, 17)?;
    for _ in 0..20 {
        let q = random_smooth_field(g, &mut rng);
        for lambda in [1.0, 2.0, 5.0, 10.0] {
            let r = check_volterra_lemma(&q, lambda, 0.0)?;
            tally(r.passes(0.02), r.line(0.02));
        }
    }

    let g = SpaceTimeGrid::new(1.0, 2.0, 1.0, 33, 33)?;
    let suite = interior_suite(g);
    let mut mins = Vec::new();
    for lambda in [2.0, 4.0, 8.0, 16.0] {
        let mut min = f64::INFINITY;
        for u in &suite {
            let r = check_carleman_estimate(u, lambda)?;
            let c = r.c_hat.filter(|c| *c > 0.0);
            min = min.min(c.unwrap_or(f64::NEG_INFINITY));
            tally(c.is_some(), r.line());
        }
        mins.push(min);
    }
    let stable = mins.iter().all(|&m| m >= 0.5 * mins[0]);
    let shown: Vec<String> = mins.iter().map(|m| format!("{m:.3e}")).collect();
    tally(stable, format!("CARLEMAN_STABILITY {} min Chat(2,4,8,16)=[{}]", verdict(stable), shown.join(", ")));

    let g = SpaceTimeGrid::new(1.0, 2.0, 1.0, 9, 9)?;
    let mut params = FunctionalParams::new(0.0);
    params.lambda = s.or("lambda", 3.0)?;
    params.beta = s.or("beta", 0.01)?;
    for _ in 0..50 {
        let data = random_cauchy_data(g, &mut rng);
        let (r1, r2) = (rng.random_range(0.0..5.0), rng.random_range(0.0..5.0));
        let w1 = scaled_to(random_smooth_field(g, &mut rng), r1);
        let w2 = scaled_to(random_smooth_field(g, &mut rng), r2);
        let r = check_convexity_gap(&w1, &w2, &data, &Drift::zero(g), &params)?;
        tally(r.passes(), r.line());
    }

    let gamma = s.or("gamma", 0.1)?;
    for delta in [0.5, 0.1, 0.01] {
        let r = theory_schedule(gamma, delta, 1.0, 2.0, 4.0)?;
        tally(true, r.line());
    }
    match theory_schedule(gamma, 0.1, 1.0, 2.0, 1.0) {
        Err(Error::InadmissibleGeometry { t_min, t_min_gamma, .. }) => {
            let ok = (t_min - 3.0).abs() < 1e-12;
            tally(ok, format!("SCHEDULE {} T=1 rejected t_min={t_min} t_min_gamma={t_min_gamma}", verdict(ok)));
        }
        other => tally(false, format!("SCHEDULE fail T=1 accepted: {other:?}")),
    }

    println!("VERIFY {passed}/{total} passed");
    if passed == total {
        Ok(())
    } else {
        Err(Failure::Verification(format!("{} of {total} checks failed", total - passed)))
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

fn expand(test: &str) -> convexify::Result<Vec<ScenarioId>> {
    use ScenarioId::*;
    Ok(match test {
        "all" => ScenarioId::ALL.to_vec(),
        "test1" => vec![Test1T1, Test1T01],
        "test2" | "test2_eps002" | "test2_eps001" => vec![Test2Eps002, Test2Eps001],
        other => vec![ScenarioId::from_name(other)?],
    })
}

pub fn reproduce(s: &Settings) -> Outcome {
    let ids = expand(s.get("scenario").ok_or_else(|| missing("scenario"))?)?;
    let out = s.out_dir();
    let mut table = String::from("scenario,letter,rel_l2_error,mask_correlation,iterations,converged,wall_time_s\n");
    let mut results: Vec<(ScenarioId, Letter, CaseResult)> = Vec::new();
    for &id in &ids {
        let sc = resolve_scenario(s, id)?;
        let cfg = scenario_inversion(s, &sc)?;
        for letter in sc.letters.clone() {
            eprintln!("reproducing {} / {}", id.name(), letter.name());
            let r = run_case(&sc, letter.clone(), &cfg)?;
            let rep = &r.inversion.report;
            let dir = out.join(id.name()).join(letter.name());
            write_space_field(&dir, "c_true", &r.case.c_true)?;
            write_space_field(&dir, "c_comp", &rep.c_comp)?;
            let line = format!(
                "{},{},{:.6},{:.6},{},{},{:.3}",
                id.name(),
                letter.name(),
                r.rel_error,
                r.mask_correlation,
                rep.iterations,
                rep.converged(),
                rep.wall_time.as_secs_f64()
            );
            println!("{line}");
            table += &line;
            table.push('\n');
            results.push((id, letter, r));
        }
    }
    write(&out, "errors.csv", &table)?;

    let error = |id: ScenarioId, l: &Letter| {
        results.iter().find(|(i, ll, _)| *i == id && ll == l).map(|(_, _, r)| r.rel_error)
    };
    let mut extra = Vec::new();
    let mut broken = Vec::new();
    for l in [Letter::A, Letter::Omega] {
        if let (Some(e1), Some(e01)) = (error(ScenarioId::Test1T1, &l), error(ScenarioId::Test1T01, &l)) {
            extra.push((format!("result.test1.{}.T1_le_T01", l.name()), (e1 <= e01).to_string()));
        }
        if let (Some(e2), Some(e1)) = (error(ScenarioId::Test2Eps002, &l), error(ScenarioId::Test2Eps001, &l)) {
            let ok = e1 >= e2;
            println!("ORDERING {} test2 {}: err(eps=0.01)={e1:.4} >= err(eps=0.02)={e2:.4}", verdict(ok), l.name());
            extra.push((format!("result.test2.{}.ordering", l.name()), ok.to_string()));
            if !ok {
                broken.push(l.name());
            }
        }
    }
    for (id, l, r) in &results {
        extra.push((format!("result.{}.{}.rel_l2_error", id.name(), l.name()), format!("{:.17e}", r.rel_error)));
        extra.push((format!("provenance.{}.digest", id.name()), scenario(*id, s.bool("paper_fine")?).digest()));
    }
    write(&out, "manifest.txt", &manifest(s, "reproduce", &extra))?;
    if !broken.is_empty() {
        return Err(Failure::Verification(format!("test2 ordering violated for {}", broken.join(", "))));
    }
    if let Some((id, l, _)) = results.iter().find(|(_, _, r)| !r.inversion.report.converged()) {
        return Err(Failure::NotConverged(format!("{} / {}", id.name(), l.name())));
    }
    Ok(())
}
