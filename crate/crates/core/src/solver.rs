//! Galerkin integration in the sine basis with delayed arguments.
//!
//! The diagonal part `-Au` is integrated exactly mode by mode; the projected
//! nonlinearity `P(f(u) + g(u(t - r_i(t))) + h)` goes through the two-stage
//! exponential scheme
//!
//! ```text
//! a       = e^{-μΔt} c_n + Δt φ₁(-μΔt) N(t_n, c_n)
//! c_{n+1} = a + Δt φ₂(-μΔt) (N(t_{n+1}, a) - N(t_n, c_n))
//! ```
//!
//! with `φ₁(z) = (e^z - 1)/z` and `φ₂(z) = (e^z - 1 - z)/z²`.

use std::sync::Arc;

use crate::error::{Divergence, Error, Result};
use crate::model::{sample_history, HistoryFunction, ProblemSpec, ScalarFn, VectorFn};
use crate::spectral::{l2_from_coeffs, Grid, SpectralField};

/// Blow-up threshold on `|u|_2`.
pub const DIVERGENCE_L2: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Interpolation {
    Linear,
    #[default]
    Cubic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    pub n_modes: usize,
    pub n_quad: usize,
    pub interp: Interpolation,
    pub dealias: bool,
}

impl SolverConfig {
    pub fn new(dt: f64, t_end: f64, n_modes: usize, n_quad: usize) -> Self {
        Self { dt, t_end, n_modes, n_quad, interp: Interpolation::Cubic, dealias: true }
    }

    pub fn validate(&self, r: f64) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::semantic("dt", "dt > 0 required"));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::semantic("T", "T > 0 required"));
        }
        if r > 0.0 && self.dt > r / 2.0 * (1.0 + 1e-12) {
            return Err(Error::semantic("dt", format!("dt <= r/2 = {} required", r / 2.0)));
        }
        let steps = self.t_end / self.dt;
        if (steps - steps.round()).abs() > 1e-6 {
            return Err(Error::semantic("dt", "T must be an integer multiple of dt"));
        }
        if self.n_modes < 1 {
            return Err(Error::semantic("n_modes", "at least one mode required"));
        }
        let need = if self.dealias { 4 * self.n_modes } else { self.n_modes };
        if self.n_quad < need {
            return Err(Error::semantic("n_quad", format!("n_quad >= {need} required")));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn grid(&self, length: f64) -> Result<Grid> {
        if self.dealias {
            Grid::new(length, self.n_modes, self.n_quad)
        } else {
            Grid::with_min_padding(length, self.n_modes, self.n_quad)
        }
    }
}

/// Solution on the uniform grid `t_i = (i - n_hist)·Δt`, with time derivatives
/// at every node for Hermite interpolation.
#[derive(Clone, Debug)]
pub struct Trajectory {
    dt: f64,
    n_hist: usize,
    interp: Interpolation,
    nodes: Vec<SpectralField>,
    derivs: Vec<Vec<f64>>,
    history: Arc<HistoryFunction>,
    problem: Arc<ProblemSpec>,
    grid: Arc<Grid>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Index of the node at `t = 0`.
    pub fn zero_index(&self) -> usize {
        self.n_hist
    }

    pub fn time(&self, i: usize) -> f64 {
        (i as f64 - self.n_hist as f64) * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn field(&self, i: usize) -> &SpectralField {
        &self.nodes[i]
    }

    pub fn fields(&self) -> &[SpectralField] {
        &self.nodes
    }

    /// Forward fields `t >= 0`.
    pub fn forward(&self) -> &[SpectralField] {
        &self.nodes[self.n_hist..]
    }

    pub fn derivative(&self, i: usize) -> &[f64] {
        &self.derivs[i]
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    pub fn history(&self) -> &HistoryFunction {
        &self.history
    }

    /// `norm(field)` at every node from `-r`.
    pub fn series(&self, norm: impl Fn(&Grid, &SpectralField) -> Result<f64>) -> Result<Vec<f64>> {
        self.nodes.iter().map(|f| norm(&self.grid, f)).collect()
    }

    pub fn l2_series(&self) -> Vec<f64> {
        let l = self.grid.length();
        self.nodes.iter().map(|f| l2_from_coeffs(f.coeffs(), l)).collect()
    }

    /// `u(t)` for `t` in `[-r, t_end]`; exact at nodes.
    pub fn interpolate(&self, t: f64) -> Result<SpectralField> {
        let mut out = vec![0.0; self.grid.n_modes()];
        self.lookup_into(t, None, &mut out)?;
        SpectralField::from_coeffs(out)
    }

    fn support(&self) -> (f64, f64) {
        (-self.history.r(), self.t_end())
    }

    // Delayed lookup. During a step `stage = Some((t_n, c_n, t_{n+1}, a))`
    // covers times past the last stored node.
    fn lookup_into(&self, tau: f64, stage: Option<(f64, &[f64], f64, &[f64])>, out: &mut [f64]) -> Result<()> {
        let (lo, _) = self.support();
        let last = self.nodes.len() - 1;
        let t_last = self.time(last);
        if tau < lo - 1e-12 * lo.abs().max(1.0) {
            return Err(Error::HistoryUnderflow { t: tau, lo, hi: t_last });
        }
        if tau < 0.0 {
            return self.history.sample_into(tau.max(lo), out);
        }
        let eps = 1e-12 * self.dt;
        if tau > t_last + eps {
            return match stage {
                Some((tn, cn, tn1, a)) if tau <= tn1 + eps => {
                    let s = ((tau - tn) / (tn1 - tn)).clamp(0.0, 1.0);
                    for ((o, x), y) in out.iter_mut().zip(cn).zip(a) {
                        *o = (1.0 - s) * x + s * y;
                    }
                    Ok(())
                }
                _ => Err(Error::HistoryUnderflow { t: tau, lo, hi: t_last }),
            };
        }
        let pos = tau / self.dt + self.n_hist as f64;
        let mut k = pos.floor() as usize;
        if k >= last {
            out.copy_from_slice(self.nodes[last].coeffs());
            return Ok(());
        }
        let s = (pos - k as f64).clamp(0.0, 1.0);
        if s == 0.0 {
            out.copy_from_slice(self.nodes[k].coeffs());
            return Ok(());
        }
        // stay on the forward side of t = 0 for the Hermite stencil
        if k < self.n_hist {
            k = self.n_hist;
        }
        let c0 = self.nodes[k].coeffs();
        let c1 = self.nodes[k + 1].coeffs();
        let h = self.dt;
        match self.interp {
            Interpolation::Linear => {
                for ((o, a), b) in out.iter_mut().zip(c0).zip(c1) {
                    *o = (1.0 - s) * a + s * b;
                }
            }
            Interpolation::Cubic if k + 1 < self.derivs.len() => {
                let d0 = &self.derivs[k];
                let d1 = &self.derivs[k + 1];
                let s2 = s * s;
                let s3 = s2 * s;
                let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                let h10 = s3 - 2.0 * s2 + s;
                let h01 = -2.0 * s3 + 3.0 * s2;
                let h11 = s3 - s2;
                for i in 0..out.len() {
                    out[i] = h00 * c0[i] + h10 * h * d0[i] + h01 * c1[i] + h11 * h * d1[i];
                }
            }
            Interpolation::Cubic => {
                // right derivative not yet known: quadratic through both values and the left slope
                let d0 = &self.derivs[k];
                for i in 0..out.len() {
                    let b = d0[i] * h;
                    out[i] = c0[i] + b * s + (c1[i] - c0[i] - b) * s * s;
                }
            }
        }
        Ok(())
    }
}

struct Workspace {
    u: Vec<f64>,
    delayed: Vec<Vec<f64>>,
    coeff_tmp: Vec<f64>,
    args: Vec<f64>,
    taus: Vec<f64>,
    out_vals: Vec<f64>,
    nodes: Vec<f64>,
}

impl Workspace {
    fn new(grid: &Grid, m: usize) -> Self {
        let nq = grid.n_quad();
        Self {
            u: vec![0.0; nq],
            delayed: vec![vec![0.0; nq]; m],
            coeff_tmp: vec![0.0; grid.n_modes()],
            args: vec![0.0; m],
            taus: vec![0.0; m],
            out_vals: vec![0.0; nq],
            nodes: grid.nodes(),
        }
    }
}

// Pointwise nonlinearity at the quadrature nodes, projected back into `out`.
fn project_nonlinear(
    t: f64,
    state: &[f64],
    lookup: &mut dyn FnMut(f64, &mut [f64]) -> Result<()>,
    p: &ProblemSpec,
    grid: &Grid,
    ws: &mut Workspace,
    out: &mut [f64],
) -> Result<()> {
    let m = p.m();
    grid.synthesize_into(state, &mut ws.u);
    p.delayed_times(t, &mut ws.taus);
    for i in 0..m {
        let mut tmp = std::mem::take(&mut ws.coeff_tmp);
        lookup(ws.taus[i], &mut tmp)?;
        grid.synthesize_into(&tmp, &mut ws.delayed[i]);
        ws.coeff_tmp = tmp;
    }
    let h_zero = p.h.is_zero();
    for q in 0..ws.u.len() {
        let mut v = p.f.value(ws.u[q]);
        if m > 0 {
            for i in 0..m {
                ws.args[i] = ws.delayed[i][q];
            }
            v += p.g.value(&ws.args);
        }
        if !h_zero {
            v += p.h.eval(ws.nodes[q], t, p.length);
        }
        ws.out_vals[q] = v;
    }
    grid.analyze_into(&ws.out_vals, out);
    Ok(())
}

/// Coefficients of `P(f(u) + g(u(t - r_1(t)), …) + h(·, t))`; the `-Au` part is
/// left to the integrator.
pub fn galerkin_rhs(
    t: f64,
    state: &SpectralField,
    history_lookup: &dyn Fn(f64) -> Result<SpectralField>,
    p: &ProblemSpec,
    grid: &Grid,
) -> Result<SpectralField> {
    if state.n_modes() != grid.n_modes() {
        return Err(Error::Dimension { expected: grid.n_modes(), got: state.n_modes() });
    }
    let mut ws = Workspace::new(grid, p.m());
    let mut out = vec![0.0; grid.n_modes()];
    let mut look = |tau: f64, buf: &mut [f64]| -> Result<()> {
        let f = history_lookup(tau)?;
        let c = f.coeffs();
        buf.iter_mut().for_each(|b| *b = 0.0);
        let k = c.len().min(buf.len());
        buf[..k].copy_from_slice(&c[..k]);
        Ok(())
    };
    project_nonlinear(t, state.coeffs(), &mut look, p, grid, &mut ws, &mut out)?;
    SpectralField::from_coeffs(out)
}

/// Per-mode ETD-RK2 weights `(e^{z}, Δt φ₁(z), Δt φ₂(z))` at `z = -μΔt`.
fn etd_weights(mu: f64, dt: f64) -> (f64, f64, f64) {
    let z = -mu * dt;
    let e = z.exp();
    let phi1 = if z == 0.0 { 1.0 } else { z.exp_m1() / z };
    let phi2 = if z.abs() < 1e-2 {
        // (e^z - 1 - z)/z² = Σ z^k/(k+2)!
        let mut term = 0.5;
        let mut sum = 0.5;
        for k in 1..10 {
            term *= z / (k as f64 + 2.0);
            sum += term;
        }
        sum
    } else {
        (z.exp_m1() - z) / (z * z)
    };
    (e, dt * phi1, dt * phi2)
}

struct Stepper {
    weights: Vec<(f64, f64, f64)>,
    ws: Workspace,
    n_now: Vec<f64>,
    n_stage: Vec<f64>,
    stage: Vec<f64>,
}

impl Stepper {
    fn new(grid: &Grid, dt: f64, m: usize) -> Self {
        let k = grid.n_modes();
        Self {
            weights: grid.eigenvalues().iter().map(|&mu| etd_weights(mu, dt)).collect(),
            ws: Workspace::new(grid, m),
            n_now: vec![0.0; k],
            n_stage: vec![0.0; k],
            stage: vec![0.0; k],
        }
    }
}

/// Advances `traj` by one step from its last node and appends the new node
/// (together with the right-hand side at the previous node).
fn advance(traj: &mut Trajectory, st: &mut Stepper) -> Result<()> {
    let n = traj.nodes.len() - 1;
    let tn = traj.time(n);
    let tn1 = traj.time(n + 1);
    let grid = traj.grid.clone();
    let problem = traj.problem.clone();
    let cn = traj.nodes[n].coeffs().to_vec();
    {
        let tr = &*traj;
        let mut look = |tau: f64, buf: &mut [f64]| tr.lookup_into(tau, None, buf);
        project_nonlinear(tn, &cn, &mut look, &problem, &grid, &mut st.ws, &mut st.n_now)?;
    }
    let mus = grid.eigenvalues();
    let d: Vec<f64> = cn.iter().zip(&st.n_now).zip(mus).map(|((c, nl), mu)| -mu * c + nl).collect();
    if traj.derivs.len() == n {
        traj.derivs.push(d);
    } else {
        traj.derivs[n] = d;
    }
    for i in 0..cn.len() {
        let (e, w1, _) = st.weights[i];
        st.stage[i] = e * cn[i] + w1 * st.n_now[i];
    }
    {
        let tr = &*traj;
        let stage = st.stage.clone();
        let mut look = |tau: f64, buf: &mut [f64]| tr.lookup_into(tau, Some((tn, &cn, tn1, &stage)), buf);
        project_nonlinear(tn1, &stage, &mut look, &problem, &grid, &mut st.ws, &mut st.n_stage)?;
    }
    let mut next = vec![0.0; cn.len()];
    for i in 0..cn.len() {
        let (_, _, w2) = st.weights[i];
        next[i] = st.stage[i] + w2 * (st.n_stage[i] - st.n_now[i]);
    }
    let l2 = l2_from_coeffs(&next, grid.length());
    if !l2.is_finite() || l2 > DIVERGENCE_L2 {
        let partial = finalize(traj.clone())?;
        return Err(Box::new(Divergence { t: tn, l2, partial }).into());
    }
    traj.nodes.push(SpectralField::from_coeffs(next)?);
    Ok(())
}

// Fills the derivative at the last node from the right-hand side.
fn finalize(mut traj: Trajectory) -> Result<Trajectory> {
    while traj.derivs.len() < traj.nodes.len() {
        let n = traj.derivs.len();
        let t = traj.time(n);
        let c = traj.nodes[n].coeffs().to_vec();
        let grid = traj.grid.clone();
        let problem = traj.problem.clone();
        let mut ws = Workspace::new(&grid, problem.m());
        let mut nl = vec![0.0; c.len()];
        {
            let tr = &traj;
            let mut look = |tau: f64, buf: &mut [f64]| tr.lookup_into(tau, None, buf);
            project_nonlinear(t, &c, &mut look, &problem, &grid, &mut ws, &mut nl)?;
        }
        let d = c.iter().zip(&nl).zip(grid.eigenvalues()).map(|((c, nl), mu)| -mu * c + nl).collect();
        traj.derivs.push(d);
    }
    Ok(traj)
}

/// Builds the history part of a trajectory for the given configuration.
fn start(p: Arc<ProblemSpec>, phi: Arc<HistoryFunction>, cfg: &SolverConfig) -> Result<Trajectory> {
    cfg.validate(p.r())?;
    if (phi.r() - p.r()).abs() > 1e-12 * p.r().max(1.0) {
        return Err(Error::semantic(
            "history",
            format!("history covers [-{}, 0] but r = {}", phi.r(), p.r()),
        ));
    }
    let grid = Arc::new(cfg.grid(p.length)?);
    let n_hist = (p.r() / cfg.dt + 1e-9).floor() as usize;
    let mut nodes = Vec::with_capacity(n_hist + cfg.n_steps() + 1);
    let mut derivs = Vec::with_capacity(n_hist + cfg.n_steps() + 1);
    for i in 0..n_hist {
        let t = (i as f64 - n_hist as f64) * cfg.dt;
        nodes.push(sample_history(&phi, t, cfg.n_modes)?);
        derivs.push(phi.derivative(t, cfg.n_modes)?.into_coeffs());
    }
    nodes.push(sample_history(&phi, 0.0, cfg.n_modes)?);
    Ok(Trajectory { dt: cfg.dt, n_hist, interp: cfg.interp, nodes, derivs, history: phi, problem: p, grid })
}

/// One step from `t_n` (the last node of `traj`); appends and returns the new node.
pub fn step(traj: &mut Trajectory) -> Result<SpectralField> {
    let k = traj.grid.n_modes();
    let mut st = Stepper::new(&traj.grid, traj.dt, traj.problem.m());
    debug_assert_eq!(st.stage.len(), k);
    advance(traj, &mut st)?;
    Ok(traj.nodes.last().unwrap().clone())
}

/// Initial trajectory holding only the history and `u(0)`.
pub fn initial_trajectory(p: &ProblemSpec, phi: &HistoryFunction, cfg: &SolverConfig) -> Result<Trajectory> {
    start(Arc::new(p.clone()), Arc::new(phi.clone()), cfg)
}

pub fn solve(p: &ProblemSpec, phi: &HistoryFunction, cfg: &SolverConfig) -> Result<Trajectory> {
    let mut traj = initial_trajectory(p, phi, cfg)?;
    let mut st = Stepper::new(&traj.grid, cfg.dt, p.m());
    for _ in 0..cfg.n_steps() {
        advance(&mut traj, &mut st)?;
    }
    finalize(traj)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeDerivative {
    /// Node times `t >= 0`.
    pub times: Vec<f64>,
    /// `|u'(t)|_2`.
    pub l2: Vec<f64>,
    /// Running `∫_0^t |u'|² ds`.
    pub running: Vec<f64>,
    pub integral: f64,
}

/// `|u'|_2` by second-order differences of the forward coefficients, with the
/// trapezoid integral of `|u'|²`.
pub fn discrete_time_derivative(traj: &Trajectory) -> Result<TimeDerivative> {
    let fw = traj.forward();
    let n = fw.len();
    if n < 3 {
        return Err(Error::Domain("time derivative needs at least 3 forward nodes".into()));
    }
    let dt = traj.dt;
    let l = traj.grid.length();
    let k = traj.grid.n_modes();
    let mut d = vec![0.0; k];
    let mut l2 = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..k {
            let c = |idx: usize| fw[idx].coeffs()[j];
            d[j] = if i == 0 {
                (-3.0 * c(0) + 4.0 * c(1) - c(2)) / (2.0 * dt)
            } else if i == n - 1 {
                (3.0 * c(n - 1) - 4.0 * c(n - 2) + c(n - 3)) / (2.0 * dt)
            } else {
                (c(i + 1) - c(i - 1)) / (2.0 * dt)
            };
        }
        l2.push(l2_from_coeffs(&d, l));
    }
    let mut running = vec![0.0; n];
    for i in 1..n {
        running[i] = running[i - 1] + 0.5 * dt * (l2[i - 1].powi(2) + l2[i].powi(2));
    }
    Ok(TimeDerivative {
        times: (0..n).map(|i| i as f64 * dt).collect(),
        integral: running[n - 1],
        l2,
        running,
    })
}
