use std::f64::consts::PI;
use std::process::Command;

use retarded_parabolic::harness::run::{check_structure, oracle_compare, sweep};
use retarded_parabolic::harness::{
    parse_config, run_check_structure, run_envelope, run_oracle, run_simulate, write_outcome, RunConfig, Status,
    SweepAxis,
};
use retarded_parabolic::Error;

const BENCHMARK: &str = include_str!("../fixtures/benchmark.cfg");

fn text(edits: &[(&str, &str)]) -> String {
    let mut t = BENCHMARK.to_string();
    for (from, to) in edits {
        assert!(t.contains(from), "fixture has no `{from}`");
        t = t.replacen(from, to, 1);
    }
    t
}

fn cfg(edits: &[(&str, &str)]) -> RunConfig {
    parse_config(&text(edits)).unwrap()
}

fn columns(csv: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = csv.lines();
    let head = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (head, rows)
}

fn ledger_value(ledger: &str, name: &str) -> f64 {
    ledger
        .lines()
        .find_map(|l| {
            let mut it = l.split_whitespace();
            (it.next() == Some(name)).then(|| it.next().unwrap().parse().unwrap())
        })
        .unwrap_or_else(|| panic!("{name} missing from ledger"))
}

#[test]
fn simulate_pure_heat_l2_column() {
    let c = cfg(&[
        ("kind = cubic", "kind = zero"),
        ("kind = linear:0.5", "kind = zero"),
        ("r = 1\nr1 = const:1", "r = 0"),
        ("phi = mode:1:0.5", "phi = mode:1:1"),
        ("T = 20", "T = 2"),
    ]);
    let out = run_simulate(&c).unwrap();
    assert_eq!(out.status, Status::Pass);
    let (head, rows) = columns(out.file("trajectory.csv").unwrap());
    assert_eq!(head, ["t", "l2", "lq_q", "h1", "h2", "linf", "mixed_q"]);
    assert_eq!(rows.len(), 201);
    for r in &rows {
        let exact = (-r[0]).exp() * (PI / 2.0).sqrt();
        assert!((r[1] - exact).abs() < 1e-10, "t = {}", r[0]);
        // single mode: |∇u| = |u|_2 and |Δu| = |u|_2 for L = π
        assert!((r[3] - r[1]).abs() < 1e-10 && (r[4] - r[1]).abs() < 1e-10);
    }
}

#[test]
fn simulate_zero_data_is_all_zero() {
    let c = cfg(&[("phi = mode:1:0.5", "phi = zero"), ("T = 20", "T = 2")]);
    let out = run_simulate(&c).unwrap();
    let (_, rows) = columns(out.file("trajectory.csv").unwrap());
    assert!(rows.iter().all(|r| r[1..].iter().all(|v| *v == 0.0)));
}

#[test]
fn csv_uses_fixed_scientific_format() {
    let c = cfg(&[("T = 20", "T = 1")]);
    let out = run_simulate(&c).unwrap();
    let csv = out.file("trajectory.csv").unwrap();
    assert!(!csv.contains('\r'));
    let second = csv.lines().nth(1).unwrap();
    assert!(second.starts_with("0.0000000000000000e0,"), "{second}");
}

#[test]
fn forced_failure_reports_first_violation() {
    let forced = [
        ("kind = zero\n\n[history]", "kind = mode:1:1\nlinf_bound = 1\nh1_bound = 1.7724538509055160\n\n[history]"),
        ("q = 8", "q = 8\nrho_q_scale = 1e-9"),
        ("T = 20", "T = 5"),
        ("stride = 10", "stride = 1"),
    ];
    let c = cfg(&forced);
    let out = run_envelope(&c).unwrap();
    assert_eq!(out.status, Status::Violation);
    let report = out.file("envelope_lq_pow_8.csv").unwrap();
    let (_, rows) = columns(report);
    let reported = rows.iter().find(|r| r[3] < 0.0).map(|r| r[0]).expect("a violation");

    // recompute from the simulated norms and the ledger constants
    let ledger = out.file("ledger.txt").unwrap();
    let (m, lam, eta, rho) = (
        ledger_value(ledger, "m_big"),
        ledger_value(ledger, "lambda_q"),
        ledger_value(ledger, "eta"),
        ledger_value(ledger, "rho_q"),
    );
    let phi_lq = 0.5f64.powi(8) * 35.0 * PI / 128.0;
    let sim = run_simulate(&c).unwrap();
    let (_, norms) = columns(sim.file("trajectory.csv").unwrap());
    let first = norms
        .iter()
        .find(|r| {
            let b = m * (-lam * r[0]).exp() * phi_lq + eta * rho * 1e-9;
            r[2] > b + 1e-6 * b + 1e-12
        })
        .map(|r| r[0])
        .expect("independent recomputation finds a violation");
    assert!((first - reported).abs() < 1e-9, "reported {reported}, recomputed {first}");
    let line = out.summary.lines().find(|l| l.starts_with("lq_pow_8")).unwrap();
    assert!(line.contains("FAIL") && line.contains(&format!("first_violation={reported:.16e}")), "{line}");
}

#[test]
fn benchmark_envelope_passes() {
    let out = run_envelope(&cfg(&[])).unwrap();
    assert_eq!(out.status, Status::Pass, "{}", out.summary);
    for name in ["lq_pow_8", "linf", "grad_sq", "int_lap_sq", "int_mixed_8", "lap_sq"] {
        assert!(out.file(&format!("envelope_{name}.csv")).is_some(), "{name}");
    }
    let ledger = out.file("ledger.txt").unwrap();
    assert!(ledger.starts_with("name"));
    assert!((ledger_value(ledger, "eps0") - 1.0 / 12.0).abs() < 1e-15);
    assert!((ledger_value(ledger, "kappa_bound") - 1.0 / 18.0).abs() < 1e-15);
}

#[test]
fn undelayed_problem_uses_decaying_linf_branch() {
    let c = cfg(&[("kind = linear:0.5", "kind = zero"), ("r = 1\nr1 = const:1", "r = 0"), ("T = 20", "T = 10")]);
    let out = run_envelope(&c).unwrap();
    assert_eq!(out.status, Status::Pass, "{}", out.summary);
    let ledger = out.file("ledger.txt").unwrap();
    let lam = ledger_value(ledger, "lambda_star");
    assert!((lam - 0.25 * 1.5f64.ln() / 3.5f64.ln()).abs() < 1e-12);
    let (_, rows) = columns(out.file("envelope_linf.csv").unwrap());
    let rho = ledger_value(ledger, "rho_star");
    // bound is ||φ||∞·e^{-λ*t} + ρ*; the grid sup of 0.5·sin x is 0.5·sin(64π/129)
    let phi = 0.5 * (64.0 * PI / 129.0).sin();
    assert!((rows[0][2] - (phi + rho)).abs() < 1e-12);
    assert!(rows.windows(2).all(|w| w[1][2] <= w[0][2]));
    assert!(rows.last().unwrap()[2] < 0.5 * (-lam * 9.0).exp() + rho + 1e-9);
}

#[test]
fn parallel_sweep_matches_serial() {
    let c = cfg(&[("T = 20", "T = 2")]);
    let values = [0.02, 0.01, 0.005, 0.0025];
    let a = sweep(&c, SweepAxis::Dt, &values, true);
    let b = sweep(&c, SweepAxis::Dt, &values, false);
    assert_eq!(a.to_csv(), b.to_csv());
    assert!(a.rows.iter().all(|r| r.is_ok()));
}

#[test]
fn sweep_records_row_errors_and_continues() {
    let c = cfg(&[("T = 20", "T = 2")]);
    let res = sweep(&c, SweepAxis::Q, &[4.0, 8.0], true);
    assert!(res.rows[0].status.starts_with("error"));
    assert!(res.rows[1].is_ok());
    assert_eq!(res.to_csv().lines().count(), 3);
}

#[test]
fn gain_sweep_recomputes_delay_constants() {
    let c = cfg(&[("T = 20", "T = 2")]);
    let res = sweep(&c, SweepAxis::Gain, &[0.25, 0.5], false);
    assert!(res.rows.iter().all(|r| r.is_ok()));
    assert!(res.rows[0].rho_q < res.rows[1].rho_q);
}

#[test]
fn coarse_oracle_is_flagged() {
    let coarse = cfg(&[("n_quad = 128", "n_quad = 128\noracle_nodes = 16")]);
    let rep = oracle_compare(&coarse).unwrap();
    assert!(!rep.passed(), "rel diff {}", rep.rel_diff);
    assert_eq!(run_oracle(&coarse).unwrap().status, Status::Violation);
    let fine = oracle_compare(&cfg(&[])).unwrap();
    assert!(fine.passed() && fine.rel_diff < rep.rel_diff);
}

#[test]
fn structure_checks() {
    let bench = check_structure(&cfg(&[]));
    assert!(bench.passed());

    let flipped = cfg(&[("kind = cubic", "kind = cubic\ncoef = -1")]);
    let rep = check_structure(&flipped);
    assert!(matches!(rep.f, Err(Error::StructureViolation { .. })));
    assert_eq!(run_check_structure(&flipped).unwrap().status, Status::Violation);

    let sinsum = cfg(&[("kind = linear:0.5", "kind = sinsum"), ("r1 = const:1", "r1 = const:1\nr2 = const:0.5")]);
    assert!((sinsum.problem.constants.b0p - 2f64.sqrt() / 2.0).abs() < 1e-12);
    let rep = check_structure(&sinsum);
    let g = rep.g.unwrap().unwrap();
    assert!((g.b0_min - 2f64.sqrt() / 2.0).abs() < 1e-3, "b0 = {}", g.b0_min);
    let out = run_check_structure(&sinsum).unwrap();
    assert!(out.summary.contains("b0'"));
}

fn rpde(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rpde")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p.to_str().unwrap().to_string()
    };
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let short = write("short.cfg", &text(&[("T = 20", "T = 1")]));
    let o = rpde(&["simulate", "--config", &short, "--out", out, "--quiet"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    assert!(dir.path().join("out/trajectory.csv").exists());

    let bad = write("bad.cfg", &text(&[("beta = 1", "beta = 3")]));
    assert_eq!(rpde(&["simulate", "--config", &bad, "--out", out]).status.code(), Some(4));

    let q6 = write("q6.cfg", &text(&[("q = 8", "q = 6")]));
    let o = rpde(&["envelope", "--config", &q6, "--out", out]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("q"));

    let blowup = write("blowup.cfg", &text(&[("kind = cubic", "kind = linear:30"), ("T = 20", "T = 3")]));
    let o = rpde(&["simulate", "--config", &blowup, "--out", out]);
    assert_eq!(o.status.code(), Some(3));
    assert!(dir.path().join("out/trajectory.csv").exists());

    let coarse = write("coarse.cfg", &text(&[("n_quad = 128", "n_quad = 128\noracle_nodes = 16")]));
    assert_eq!(rpde(&["oracle", "--config", &coarse, "--out", out]).status.code(), Some(2));

    let o = rpde(&["sweep", "--config", &short, "--out", out, "--axis", "q", "--values", "8,16"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("out/sweep_q.csv").exists());
    assert_eq!(rpde(&["sweep", "--config", &short, "--out", out, "--axis", "nope", "--values", "1"]).status.code(), Some(4));

    let missing = dir.path().join("missing.cfg");
    assert_eq!(rpde(&["simulate", "--config", missing.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn written_outcome_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_check_structure(&cfg(&[])).unwrap();
    write_outcome(&dir.path().join("nested"), &out).unwrap();
    let body = std::fs::read_to_string(dir.path().join("nested/structure.txt")).unwrap();
    assert_eq!(body, out.summary);
}
