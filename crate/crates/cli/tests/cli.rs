use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use convexify::formats::{parse_key_values, read_cfld, read_cmeas};
use convexify::forward::{extract_f0, extract_g1, solve_forward, Drift, LateralTrace, ParabolicProblem};
use convexify::{ScalarField, SpaceTimeGrid};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convexify")).args(args).output().expect("spawn convexify")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest(dir: &Path) -> std::collections::BTreeMap<String, String> {
    parse_key_values(&fs::read_to_string(dir.join("manifest.txt")).unwrap()).unwrap()
}

fn simulate_c0(out: &Path) {
    let o = run(&["simulate", "--amplitude", "0", "--fine-nx", "33", "--fine-nt", "33", "--out", p(out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn verify_passes_every_check() {
    let o = run(&["verify"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let text = stdout(&o);
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("VERIFY "), "{last}");
    let (p, t) = last["VERIFY ".len()..].split_once(' ').unwrap().0.split_once('/').unwrap();
    assert_eq!(p, t);
    assert!(t.parse::<usize>().unwrap() > 100);
    assert!(!text.lines().any(|l| l.contains(" fail")));
}

#[test]
fn coefficient_free_simulation_matches_direct_solve() {
    let dir = tempfile::tempdir().unwrap();
    simulate_c0(dir.path());
    let m = read_cmeas(&fs::read_to_string(dir.path().join("measurements.cmeas")).unwrap()).unwrap();
    assert_eq!((m.grid.nx(), m.grid.nt(), m.t0), (17, 17, 0.0));

    let fine = SpaceTimeGrid::new(1.0, 2.0, 1.0, 33, 33).unwrap();
    let init = ScalarField::from_fn_space(fine, |x, y| 1.0 + (PI * (x - 1.0)).sin() * (PI * (y - 1.0)).sin());
    let prob = ParabolicProblem::new(
        fine,
        ScalarField::from_fn_space(fine, |_, _| 0.0),
        Drift::zero(fine),
        init,
        LateralTrace::constant(fine, 1.0),
        Some(1.0),
    )
    .unwrap();
    let u = solve_forward(&prob).unwrap();
    let g1 = extract_g1(&u).unwrap();
    let f0 = extract_f0(&u, 0.0).unwrap();
    for j in 0..17 {
        for k in 0..17 {
            assert_eq!(m.g1.at(j, k), g1.at(2 * j, 2 * k), "g1 at ({j},{k})");
        }
        for i in 0..17 {
            assert_eq!(m.f0.at_s(i, j), f0.at_s(2 * i, 2 * j), "f0 at ({i},{j})");
        }
    }

    // u = 1 + exp(-2π²(t+T)) sin(π(x1-1)) sin(π(x2-1)) solves the heat equation.
    let scale = PI;
    for j in 0..17 {
        let y = 1.0 + j as f64 / 16.0;
        for k in 8..17 {
            let t = -1.0 + k as f64 / 8.0;
            let exact = -PI * (PI * (y - 1.0)).sin() * (-2.0 * PI * PI * (t + 1.0)).exp();
            assert!((m.g1.at(j, k) - exact).abs() < 0.02 * scale, "({j},{k}) {} vs {exact}", m.g1.at(j, k));
        }
    }
}

#[test]
fn coefficient_free_simulation_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    simulate_c0(dir.path());
    let fresh = read_cmeas(&fs::read_to_string(dir.path().join("measurements.cmeas")).unwrap()).unwrap();
    let golden = read_cmeas(include_str!("data/c0_test1.cmeas")).unwrap();
    assert_eq!(fresh, golden);
    assert_eq!(manifest(dir.path())["amplitude"], "0");
}

#[test]
fn malformed_measurements_report_the_offset() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cmeas");
    fs::write(&bad, "CMEAS 1 17 17 1.0 2.0 1.0 0.0\n0.5 abc\n").unwrap();
    let o = run(&["invert", "--input", p(&bad), "--out", p(&dir.path().join("out"))]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("byte 34"), "{}", stderr(&o));

    let o = run(&["invert", "--input", p(&dir.path().join("missing.cmeas"))]);
    assert_eq!(code(&o), 4);
    let o = run(&["frobnicate"]);
    assert_eq!(code(&o), 4);
    let o = run(&["invert", "--input", p(&bad), "--mode", "mean"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn truncated_inversion_writes_outputs_and_replays_from_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let o = run(&["simulate", "--fine-nx", "33", "--fine-nt", "33", "--out", p(&sim)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let first = dir.path().join("first");
    let input = sim.join("measurements.cmeas");
    let truth = sim.join("c_true.cfld");
    let o = run(&["invert", "--input", p(&input), "--truth", p(&truth), "--max-iters", "15", "--out", p(&first)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    for f in ["c_comp.cfld", "c_comp.pgm", "c_comp.pgm.txt", "c_comp.csv", "j_trace.csv", "manifest.txt"] {
        assert!(first.join(f).exists(), "{f}");
    }
    let m = manifest(&first);
    assert_eq!(m["max_iters"], "15");
    assert_eq!(m["provenance.command"], "invert");
    assert_eq!(m["result.converged"], "false");
    assert_eq!(fs::read_to_string(first.join("j_trace.csv")).unwrap().lines().count(), 17);

    let second = dir.path().join("second");
    let o = run(&["invert", "--config", p(&first.join("manifest.txt")), "--out", p(&second)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    for f in ["j_trace.csv", "c_comp.cfld", "c_comp.pgm"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
    assert_eq!(manifest(&second)["provenance.config_hash"].len(), 64);
}

#[test]
fn averaged_mode_is_recorded_and_changes_the_result() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let o = run(&["simulate", "--fine-nx", "33", "--fine-nt", "33", "--out", p(&sim)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let input = sim.join("measurements.cmeas");
    let slice = dir.path().join("slice");
    let avg = dir.path().join("avg");
    let o = run(&["invert", "--input", p(&input), "--max-iters", "30", "--out", p(&slice)]);
    assert_eq!(code(&o), 3);
    let o = run(&["invert", "--input", p(&input), "--max-iters", "30", "--mode", "average", "--gamma", "0.3", "--out", p(&avg)]);
    assert_eq!(code(&o), 3);
    let m = manifest(&avg);
    assert_eq!((m["mode"].as_str(), m["gamma"].as_str()), ("average", "0.3"));
    assert_eq!(
        fs::read(slice.join("j_trace.csv")).unwrap(),
        fs::read(avg.join("j_trace.csv")).unwrap(),
        "the mode only affects the final reconstruction"
    );
    let a = read_cfld(&fs::read_to_string(slice.join("c_comp.cfld")).unwrap()).unwrap();
    let b = read_cfld(&fs::read_to_string(avg.join("c_comp.cfld")).unwrap()).unwrap();
    let diff = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-6, "{diff}");
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "amplitude=0\nfine_nx=33\nfine_nt=33\nletter=Omega\nseed=7\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&["simulate", "--config", p(&cfg), "--letter", "A", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = manifest(&out);
    assert_eq!(m["letter"], "A");
    assert_eq!(m["seed"], "7");
    assert_eq!(m["provenance.seed"], "7");
    let golden = read_cmeas(include_str!("data/c0_test1.cmeas")).unwrap();
    let fresh = read_cmeas(&fs::read_to_string(out.join("measurements.cmeas")).unwrap()).unwrap();
    assert_eq!(fresh, golden);

    fs::write(&cfg, "lamda=2\n").unwrap();
    let o = run(&["simulate", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("lamda"));
}

#[test]
fn small_reproduce_run_writes_images_and_error_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rep");
    let o = run(&["reproduce", "test1_T1", "--fine-nx", "33", "--fine-nt", "33", "--max-iters", "10", "--out", p(&out)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let table = fs::read_to_string(out.join("errors.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("test1_T1,A,") && rows[2].starts_with("test1_T1,Omega,"), "{table}");
    for letter in ["A", "Omega"] {
        for f in ["c_true.pgm", "c_comp.pgm", "c_comp.cfld"] {
            assert!(out.join("test1_T1").join(letter).join(f).exists(), "{letter}/{f}");
        }
    }
    let pgm = fs::read_to_string(out.join("test1_T1/A/c_true.pgm")).unwrap();
    assert!(pgm.starts_with("P2\n"));
    assert!(manifest(&out).contains_key("result.test1_T1.A.rel_l2_error"));
}
