//! `convexify`: simulate measurements, invert them, verify the theory and
//! reproduce the reference tests.
//!
//! Exit status: 0 success, 2 verification failure, 3 non-convergence,
//! 4 I/O, parse or configuration error, 1 any other failure.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::settings::Settings;

#[derive(Parser, Debug)]
#[command(name = "convexify", version, about = "Convexification for a parabolic coefficient inverse problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args, Debug, Default)]
struct Shared {
    /// key=value settings file; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (default `out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Carleman weight parameter.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Regularization parameter.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Relative noise level.
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Coefficient reconstruction: `slice` or `average`.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Half-width fraction of the time window for `--mode average`.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Use the 641 × 641 × 513 forward grid (slow, several GB).
    #[arg(long, global = true)]
    paper_fine: bool,
    /// Project iterates onto the H³ ball of this radius.
    #[arg(long, global = true, value_name = "R")]
    project_ball: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the forward solver and write a CMEAS measurement file.
    Simulate(SimulateArgs),
    /// Reconstruct the coefficient from a CMEAS file.
    Invert(InvertArgs),
    /// Run the randomized checks of the Volterra lemma, the Carleman
    /// estimate, convexity and the parameter schedule.
    Verify(VerifyArgs),
    /// Simulate and invert a reference test, writing image pairs and an
    /// error table.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario name (default `test1_T1`).
    #[arg(long)]
    scenario: Option<String>,
    /// `A` or `Omega`.
    #[arg(long)]
    letter: Option<String>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    background: Option<f64>,
    /// Override the forward grid's nodes per space axis.
    #[arg(long)]
    fine_nx: Option<usize>,
    /// Override the forward grid's time levels.
    #[arg(long)]
    fine_nt: Option<usize>,
    /// Also write the full forward solution.
    #[arg(long)]
    full_field: bool,
}

#[derive(Args, Debug)]
struct InvertArgs {
    /// CMEAS measurement file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Space-only CFLD of the true coefficient, for the error report.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// `lbfgs` or `sd`.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    grad_tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Time unit of the regularizer (default: T of the data).
    #[arg(long)]
    time_unit: Option<f64>,
}

#[derive(Args, Debug)]
struct VerifyArgs {}

#[derive(Args, Debug)]
struct ReproduceArgs {
    /// A scenario name, `test1`, `test2` or `all`.
    test: String,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    fine_nx: Option<usize>,
    #[arg(long)]
    fine_nt: Option<usize>,
}

fn settings(cli: &Cli) -> convexify::Result<Settings> {
    let sh = &cli.shared;
    let mut s = match &sh.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    s.apply("out", sh.out.as_ref().map(|p| p.display()))?;
    s.apply("seed", sh.seed)?;
    s.apply("lambda", sh.lambda)?;
    s.apply("beta", sh.beta)?;
    s.apply("sigma", sh.sigma)?;
    s.apply("mode", sh.mode.as_ref())?;
    s.apply("gamma", sh.gamma)?;
    s.flag("paper_fine", sh.paper_fine)?;
    s.apply("project_ball", sh.project_ball)?;
    match &cli.command {
        Command::Simulate(a) => {
            s.apply("scenario", a.scenario.as_ref())?;
            s.apply("letter", a.letter.as_ref())?;
            s.apply("amplitude", a.amplitude)?;
            s.apply("background", a.background)?;
            s.apply("fine_nx", a.fine_nx)?;
            s.apply("fine_nt", a.fine_nt)?;
            s.flag("full_field", a.full_field)?;
        }
        Command::Invert(a) => {
            s.apply("input", a.input.as_ref().map(|p| p.display()))?;
            s.apply("truth", a.truth.as_ref().map(|p| p.display()))?;
            s.apply("method", a.method.as_ref())?;
            s.apply("grad_tol", a.grad_tol)?;
            s.apply("max_iters", a.max_iters)?;
            s.apply("time_unit", a.time_unit)?;
        }
        Command::Verify(_) => {}
        Command::Reproduce(a) => {
            s.set("scenario", a.test.as_str())?;
            s.apply("max_iters", a.max_iters)?;
            s.apply("fine_nx", a.fine_nx)?;
            s.apply("fine_nt", a.fine_nt)?;
        }
    }
    Ok(s)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { commands::EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = settings(&cli).map_err(commands::Failure::from).and_then(|s| match &cli.command {
        Command::Simulate(_) => commands::simulate(&s),
        Command::Invert(_) => commands::invert(&s),
        Command::Verify(_) => commands::verify(&s),
        Command::Reproduce(_) => commands::reproduce(&s),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
