use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimates::{
    build_lq_chain, check_envelope, eventual_invariance_check, h1_envelope, h2_envelope, integrated_envelopes,
    linf_ball, observe, ConstantLedger, E2Bound, E3Bound, EnvelopeReport, H2Bound, H2Form, InvarianceReport,
    LinfBound, LqBound, NormSelector, PhiNorms,
};
use crate::harness::config::RunConfig;
use crate::harness::oracle::solve_fd;
use crate::model::{check_f, check_g, DelayCoupling, DelayFn, DelaySpec, FReport, GReport};
use crate::solver::{solve, SolverConfig, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Violation,
    Divergence,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Violation => 2,
            Status::Divergence => 3,
        }
    }
}

/// Result of a subcommand: status, a human summary and the files to write.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub status: Status,
    pub summary: String,
    pub files: Vec<(String, String)>,
}

impl Outcome {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|f| f.0 == name).map(|f| f.1.as_str())
    }
}

/// Exit status for a finished or failed run.
pub fn exit_code(res: &Result<Outcome>) -> i32 {
    match res {
        Ok(o) => o.status.exit_code(),
        Err(Error::Divergence(_)) => 3,
        Err(e) if e.is_config() => 4,
        Err(_) => 1,
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn simulate_trajectory(cfg: &RunConfig) -> Result<Trajectory> {
    simulate_with(cfg, &cfg.solver)
}

fn simulate_with(cfg: &RunConfig, solver: &SolverConfig) -> Result<Trajectory> {
    let phi = cfg.history.build(cfg.problem.r(), solver.n_modes)?;
    solve(&cfg.problem, &phi, solver)
}

/// Norm table for the forward nodes at the given stride.
pub fn norms_csv(traj: &Trajectory, q: f64, stride: usize) -> Result<String> {
    let g = traj.grid();
    let mut s = String::from("t,l2,lq_q,h1,h2,linf,mixed_q\n");
    for (i, f) in traj.forward().iter().enumerate().step_by(stride.max(1)) {
        let t = i as f64 * traj.dt();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            fmt(t),
            fmt(g.l2_norm(f)?),
            fmt(g.lq_norm_pow(f, q)?),
            fmt(g.h1_norm(f)?),
            fmt(g.h2_norm(f)?),
            fmt(g.linf_norm(f)?),
            fmt(g.mixed_integral(f, q)?)
        );
    }
    Ok(s)
}

pub fn run_simulate(cfg: &RunConfig) -> Result<Outcome> {
    let q = cfg.estimates.q;
    match simulate_trajectory(cfg) {
        Ok(traj) => {
            let csv = norms_csv(&traj, q, cfg.output.stride)?;
            let last = traj.forward().last().unwrap();
            let summary = format!(
                "simulated to t = {} with {} steps; final |u|_2 = {:.6e}\n",
                traj.t_end(),
                traj.forward().len() - 1,
                traj.grid().l2_norm(last)?
            );
            Ok(Outcome { status: Status::Pass, summary, files: vec![("trajectory.csv".into(), csv)] })
        }
        Err(Error::Divergence(d)) => {
            let csv = norms_csv(&d.partial, q, cfg.output.stride)?;
            Ok(Outcome {
                status: Status::Divergence,
                summary: format!("{d}\n"),
                files: vec![("trajectory.csv".into(), csv)],
            })
        }
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeRun {
    pub reports: Vec<EnvelopeReport>,
    pub ledger: ConstantLedger,
    pub invariance: InvarianceReport,
    pub phi: PhiNorms,
    pub h2_form: H2Form,
}

impl EnvelopeRun {
    pub fn report(&self, norm: &str) -> Option<&EnvelopeReport> {
        self.reports.iter().find(|r| r.norm == norm)
    }

    pub fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.passed())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for r in &self.reports {
            let first = r.first_violation.map_or("none".to_string(), fmt);
            let _ = writeln!(
                s,
                "{:<14} {} violations={} worst_margin={} first_violation={}",
                r.norm,
                if r.passed() { "pass" } else { "FAIL" },
                r.violations,
                fmt(r.worst_margin),
                first
            );
        }
        let inv = &self.invariance;
        let _ = writeln!(
            s,
            "invariance     applicable={} entered={} t0={}",
            inv.applicable,
            inv.entered,
            inv.t0.map_or("none".to_string(), fmt)
        );
        s
    }

    pub fn into_outcome(self) -> Outcome {
        let mut files: Vec<(String, String)> =
            self.reports.iter().map(|r| (format!("envelope_{}.csv", r.norm), r.to_csv())).collect();
        files.push(("ledger.txt".into(), self.ledger.to_text()));
        let summary = self.summary();
        files.push(("summary.txt".into(), summary.clone()));
        Outcome { status: if self.passed() { Status::Pass } else { Status::Violation }, summary, files }
    }
}

pub fn envelope_run(cfg: &RunConfig) -> Result<EnvelopeRun> {
    let p = &cfg.problem;
    let est = &cfg.estimates;
    let q = est.q;
    let chain = build_lq_chain(p, q)?;
    let ball = linf_ball(p)?;
    let traj = simulate_trajectory(cfg)?;
    let phi = PhiNorms::of_trajectory(&traj, q)?;
    let h1 = h1_envelope(p, &chain, &phi)?;
    let int = integrated_envelopes(&h1, &chain, &phi);
    let tol = est.tol;

    let mut reports = vec![
        check_envelope(&traj, &LqBound { chain, phi_lq_q: phi.lq_q, rho_scale: est.rho_q_scale }, NormSelector::LqPow(q), tol)?,
        check_envelope(&traj, &LinfBound { ball, phi_linf: phi.linf, r: p.r() }, NormSelector::Linf, tol)?,
        check_envelope(&traj, &h1, NormSelector::GradSq, tol)?,
        check_envelope(&traj, &E2Bound(int), NormSelector::IntLapSq, tol)?,
        check_envelope(&traj, &E3Bound(int), NormSelector::IntMixed(q), tol)?,
    ];
    let form = if p.separated { H2Form::Decay } else { H2Form::Bounded };
    let h2 = h2_envelope(p, &h1, &traj, form, est.h2_rate)?;
    let (target, data) = match &est.h2_held_out {
        Some(spec) => {
            let held = spec.build(p.r(), cfg.solver.n_modes)?;
            let ht = solve(p, &held, &cfg.solver)?;
            let d = PhiNorms::of_trajectory(&ht, q)?.h2_data();
            (ht, d)
        }
        None => (traj.clone(), h2.data_norm),
    };
    reports.push(check_envelope(&target, &H2Bound { envelope: h2, data_norm: data }, NormSelector::LapSq, tol)?);

    let invariance = eventual_invariance_check(&traj, &ball, est.invariance_eps)?;
    let mut ledger = ConstantLedger::default();
    ledger.push("q_star", p.exponents().q_star, "max(p*, 2α, 2β)");
    ledger.push("p_star", p.exponents().p_star, "β(γ-1)/(γ-β)");
    ledger.push("a1", p.constants.a1, "growth constant of f");
    ledger.push("b0p", p.constants.b0p, "sup|∇g|/(||v||^{β-1}+1)");
    ledger.push("b1p", p.constants.b1p, "sup|g|/(||v||^β+1)");
    ledger.add_chain(&chain);
    ledger.add_ball(&ball);
    ledger.add_h1(&h1);
    ledger.push("C_T", int.c_t(cfg.solver.t_end), "finite-horizon mixed-integral constant at T");
    ledger.add_h2(&h2);
    if est.rho_q_scale != 1.0 {
        ledger.push("rho_q_scale", est.rho_q_scale, "test hook applied to ρ_q");
    }
    Ok(EnvelopeRun { reports, ledger, invariance, phi, h2_form: form })
}

pub fn run_envelope(cfg: &RunConfig) -> Result<Outcome> {
    Ok(envelope_run(cfg)?.into_outcome())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Q,
    R,
    Dt,
    NModes,
    Gain,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "q" => SweepAxis::Q,
            "r" => SweepAxis::R,
            "dt" => SweepAxis::Dt,
            "n_modes" => SweepAxis::NModes,
            "gain" => SweepAxis::Gain,
            _ => return Err(Error::Config(format!("unknown sweep axis `{s}` (q, r, dt, n_modes, gain)"))),
        })
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Q => "q",
            SweepAxis::R => "r",
            SweepAxis::Dt => "dt",
            SweepAxis::NModes => "n_modes",
            SweepAxis::Gain => "gain",
        }
    }
}

pub fn apply_axis(cfg: &RunConfig, axis: SweepAxis, v: f64) -> Result<RunConfig> {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::Q => c.estimates.q = v,
        SweepAxis::Dt => c.solver.dt = v,
        SweepAxis::NModes => {
            if !(v >= 1.0 && v.fract() == 0.0) {
                return Err(Error::semantic("n_modes", "positive integer required"));
            }
            let ratio = (cfg.solver.n_quad as f64 / cfg.solver.n_modes as f64).ceil() as usize;
            c.solver.n_modes = v as usize;
            c.solver.n_quad = c.solver.n_modes * ratio.max(1);
        }
        SweepAxis::R => {
            let delays = c
                .inputs
                .delays
                .delays
                .iter()
                .map(|_| DelayFn::Constant(v))
                .collect();
            c.inputs.delays = DelaySpec::new(v, delays)?;
        }
        SweepAxis::Gain => {
            c.inputs.g = match c.inputs.g {
                DelayCoupling::Linear { .. } => DelayCoupling::Linear { gain: v },
                DelayCoupling::SinSum { .. } => DelayCoupling::SinSum { amp: v },
                DelayCoupling::SinOfSum { .. } => DelayCoupling::SinOfSum { amp: v },
                DelayCoupling::Power { p, .. } => DelayCoupling::Power { p, coef: v },
                DelayCoupling::Zero => return Err(Error::semantic("g.kind", "a zero coupling has no gain")),
            };
            c.inputs.overrides.b0 = None;
            c.inputs.overrides.b0p = None;
            c.inputs.overrides.b1p = None;
        }
    }
    c.rebuilt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub status: String,
    pub terminal_l2: f64,
    pub terminal_lq_q: f64,
    pub lq_margin: f64,
    pub h1_margin: f64,
    pub fitted_rate: f64,
    pub rho_q: f64,
    pub rho_q_root: f64,
    pub rho_star: f64,
    pub self_diff: f64,
    pub ratio: f64,
    terminal: Vec<f64>,
}

impl SweepRow {
    fn failed(value: f64, e: &Error) -> Self {
        let msg: String = e.to_string().chars().map(|c| if c == ',' || c == '\n' { ';' } else { c }).collect();
        Self {
            value,
            status: format!("error: {msg}"),
            terminal_l2: f64::NAN,
            terminal_lq_q: f64::NAN,
            lq_margin: f64::NAN,
            h1_margin: f64::NAN,
            fitted_rate: f64::NAN,
            rho_q: f64::NAN,
            rho_q_root: f64::NAN,
            rho_star: f64::NAN,
            self_diff: f64::NAN,
            ratio: f64::NAN,
            terminal: vec![],
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// `-slope` of the least-squares line through `(t, ln y)` for `t` in `[T/2, T]`.
pub fn fitted_decay_rate(series: &[(f64, f64)]) -> f64 {
    let t_end = series.last().map(|x| x.0).unwrap_or(0.0);
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, y)| *t >= t_end / 2.0 && *y > 0.0)
        .map(|(t, y)| (*t, y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    -sxy / sxx
}

fn sweep_one(cfg: &RunConfig, axis: SweepAxis, v: f64) -> SweepRow {
    let run = || -> Result<SweepRow> {
        let c = apply_axis(cfg, axis, v)?;
        let p = &c.problem;
        let q = c.estimates.q;
        let chain = build_lq_chain(p, q)?;
        let ball = linf_ball(p)?;
        let traj = simulate_trajectory(&c)?;
        let phi = PhiNorms::of_trajectory(&traj, q)?;
        let h1 = h1_envelope(p, &chain, &phi)?;
        let tol = c.estimates.tol;
        let lq = check_envelope(&traj, &LqBound { chain, phi_lq_q: phi.lq_q, rho_scale: 1.0 }, NormSelector::LqPow(q), tol)?;
        let h1r = check_envelope(&traj, &h1, NormSelector::GradSq, tol)?;
        let obs = observe(&traj, NormSelector::LqPow(q))?;
        let last = traj.forward().last().unwrap();
        Ok(SweepRow {
            value: v,
            status: "ok".into(),
            terminal_l2: traj.grid().l2_norm(last)?,
            terminal_lq_q: obs.last().unwrap().1,
            lq_margin: lq.worst_margin,
            h1_margin: h1r.worst_margin,
            fitted_rate: fitted_decay_rate(&obs),
            rho_q: chain.rho_q,
            rho_q_root: chain.rho_q_root(),
            rho_star: ball.rho_star,
            self_diff: f64::NAN,
            ratio: f64::NAN,
            terminal: last.coeffs().to_vec(),
        })
    };
    run().unwrap_or_else(|e| SweepRow::failed(v, &e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "value,status,terminal_l2,terminal_lq_q,lq_margin,h1_margin,fitted_rate,rho_q,rho_q_root,rho_star,self_diff,ratio\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                fmt(r.value),
                r.status,
                fmt(r.terminal_l2),
                fmt(r.terminal_lq_q),
                fmt(r.lq_margin),
                fmt(r.h1_margin),
                fmt(r.fitted_rate),
                fmt(r.rho_q),
                fmt(r.rho_q_root),
                fmt(r.rho_star),
                fmt(r.self_diff),
                fmt(r.ratio)
            );
        }
        s
    }
}

pub fn sweep(cfg: &RunConfig, axis: SweepAxis, values: &[f64], parallel: bool) -> SweepResult {
    let mut rows: Vec<SweepRow> = if parallel {
        values.par_iter().map(|&v| sweep_one(cfg, axis, v)).collect()
    } else {
        values.iter().map(|&v| sweep_one(cfg, axis, v)).collect()
    };
    // self-convergence columns: difference of terminal states between neighbours
    for k in 1..rows.len() {
        let (a, b) = (&rows[k - 1].terminal, &rows[k].terminal);
        if a.is_empty() || b.is_empty() {
            continue;
        }
        let n = a.len().max(b.len());
        let get = |v: &Vec<f64>, i: usize| v.get(i).copied().unwrap_or(0.0);
        rows[k].self_diff = (0..n).map(|i| (get(a, i) - get(b, i)).abs()).fold(0.0, f64::max);
        if k >= 2 && rows[k - 1].self_diff.is_finite() {
            rows[k].ratio = rows[k - 1].self_diff / rows[k].self_diff;
        }
    }
    SweepResult { axis, rows }
}

pub fn run_sweep(cfg: &RunConfig, axis: SweepAxis, values: &[f64]) -> Result<Outcome> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let res = sweep(cfg, axis, values, true);
    let mut summary = String::new();
    for r in &res.rows {
        let _ = writeln!(summary, "{}={} {}", axis.name(), r.value, r.status);
    }
    let ok = res.rows.iter().all(|r| !r.is_ok() || (r.lq_margin >= 0.0 && r.h1_margin >= 0.0));
    Ok(Outcome {
        status: if ok { Status::Pass } else { Status::Violation },
        summary,
        files: vec![(format!("sweep_{}.csv", axis.name()), res.to_csv())],
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub times: Vec<f64>,
    pub spectral_l2: Vec<f64>,
    pub fd_l2: Vec<f64>,
    pub rel_diff: f64,
    pub threshold: f64,
    pub nodes: usize,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.rel_diff < self.threshold
    }
}

pub const ORACLE_THRESHOLD: f64 = 1e-3;

pub fn oracle_compare(cfg: &RunConfig) -> Result<OracleReport> {
    let solver = SolverConfig { t_end: cfg.oracle.t_end, ..cfg.solver };
    solver.validate(cfg.problem.r())?;
    let phi = cfg.history.build(cfg.problem.r(), solver.n_modes)?;
    let traj = solve(&cfg.problem, &phi, &solver)?;
    let fd = solve_fd(&cfg.problem, &phi, cfg.oracle.nodes, solver.dt, solver.t_end)?;
    let sp: Vec<f64> = traj.l2_series()[traj.zero_index()..].to_vec();
    let n = sp.len().min(fd.l2.len());
    let scale = sp.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let diff = (0..n).map(|i| (sp[i] - fd.l2[i]).abs()).fold(0.0, f64::max);
    Ok(OracleReport {
        times: (0..n).map(|i| i as f64 * solver.dt).collect(),
        spectral_l2: sp[..n].to_vec(),
        fd_l2: fd.l2[..n].to_vec(),
        rel_diff: if scale > 0.0 { diff / scale } else { diff },
        threshold: ORACLE_THRESHOLD,
        nodes: fd.nodes,
    })
}

pub fn run_oracle(cfg: &RunConfig) -> Result<Outcome> {
    let rep = oracle_compare(cfg)?;
    let mut csv = String::from("t,spectral_l2,fd_l2\n");
    for i in (0..rep.times.len()).step_by(cfg.output.stride.max(1)) {
        let _ = writeln!(csv, "{},{},{}", fmt(rep.times[i]), fmt(rep.spectral_l2[i]), fmt(rep.fd_l2[i]));
    }
    let summary = format!(
        "oracle nodes={} relative sup-difference of |u|_2 = {:.6e} (threshold {:.1e}): {}\n",
        rep.nodes,
        rep.rel_diff,
        rep.threshold,
        if rep.passed() { "pass" } else { "FLAGGED" }
    );
    Ok(Outcome {
        status: if rep.passed() { Status::Pass } else { Status::Violation },
        summary,
        files: vec![("oracle.csv".into(), csv)],
    })
}

#[derive(Debug)]
pub struct StructureReport {
    pub f: Result<FReport>,
    pub g: Option<Result<GReport>>,
}

impl StructureReport {
    pub fn passed(&self) -> bool {
        self.f.is_ok() && self.g.as_ref().map_or(true, |g| g.is_ok())
    }
}

pub const STRUCTURE_RANGE: f64 = 10.0;
pub const STRUCTURE_SAMPLES: usize = 10_001;

pub fn check_structure(cfg: &RunConfig) -> StructureReport {
    let p = &cfg.problem;
    let f = check_f(&p.f, &p.constants, STRUCTURE_RANGE, STRUCTURE_SAMPLES);
    let g = if p.m() == 0 {
        None
    } else {
        Some(check_g(&p.g, p.m(), p.constants.beta, Some(p.constants.b0), STRUCTURE_RANGE))
    };
    StructureReport { f, g }
}

pub fn run_check_structure(cfg: &RunConfig) -> Result<Outcome> {
    let rep = check_structure(cfg);
    let mut s = String::new();
    match &rep.f {
        Ok(r) => {
            let _ = writeln!(
                s,
                "f: pass (F0 margin {:.6e}, F1 margin {:.6e}, growth margin {:.6e}, {} samples)",
                r.f0_margin, r.f1_margin, r.a1_margin, r.samples
            );
        }
        Err(e) => {
            let _ = writeln!(s, "f: FAIL {e}");
        }
    }
    match &rep.g {
        None => {
            let _ = writeln!(s, "g: no delays");
        }
        Some(Ok(r)) => {
            let _ = writeln!(
                s,
                "g: pass (b0' = {:.6e}, b1' = {:.6e}, minimal b0 = {:.6e}, {} samples)",
                r.b0p, r.b1p, r.b0_min, r.samples
            );
        }
        Some(Err(e)) => {
            let _ = writeln!(s, "g: FAIL {e}");
        }
    }
    let status = if rep.passed() { Status::Pass } else { Status::Violation };
    Ok(Outcome { status, files: vec![("structure.txt".into(), s.clone())], summary: s })
}
