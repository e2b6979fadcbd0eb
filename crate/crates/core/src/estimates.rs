//! Explicit decay constants and envelopes for `|u|_q^q`, `|u|_∞`, `|∇u|²`,
//! the integrated quantities `∫_t^{t+1}|Δu|²`, `∫_t^{t+1}∫|u|^{q-2}|∇u|²`, and
//! calibrated `|Δu|²` envelopes.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::inequality::{decay_constants, ExponentialKernel, InequalityConstants};
use crate::model::{CriticalExponents, HistoryFunction, ProblemSpec};
use crate::solver::Trajectory;
use crate::spectral::{eigenvalue, Grid, SpectralField};

/// Mass bound of the delay kernel used for the `L^q` chain.
pub const CHAIN_KAPPA: f64 = 0.25;

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// `ε₀ = ½·min(Λ/(2(N + b₁'(m+1) + 1)), Λ/(4m b₁'))`.
pub fn eps0(p: &ProblemSpec) -> f64 {
    let c = &p.constants;
    let m = p.m().max(1) as f64;
    let a = c.lambda_diss / (2.0 * (c.n_diss + c.b1p * (m + 1.0) + 1.0));
    let b = c.lambda_diss / (4.0 * m * c.b1p);
    0.5 * a.min(b)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LqChain {
    pub q: f64,
    pub q_gamma: f64,
    pub sigma: f64,
    pub q_prime: f64,
    pub eps0: f64,
    pub a_eps0: f64,
    pub c_eps_prime: f64,
    pub c_eps_dprime: f64,
    pub ln_rho_q: f64,
    pub rho_q: f64,
    pub lambda_q: f64,
    /// `ε₀ q m b₁'`, the weight of the delayed term.
    pub kappa_weight: f64,
    pub kappa_bound: f64,
    pub eta: f64,
    pub m_big: f64,
    pub r: f64,
    pub inequality: InequalityConstants,
}

impl LqChain {
    /// `ρ_q^{1/q}`, computed in log space.
    pub fn rho_q_root(&self) -> f64 {
        (self.ln_rho_q / self.q).exp()
    }

    /// Bound `Y(s)` on `|u(s)|_q^q` valid for `s >= -r`.
    pub fn bound(&self, t: f64, phi_lq_q: f64) -> f64 {
        self.m_big * (-self.lambda_q * t).exp() * phi_lq_q + self.eta * self.rho_q
    }
}

pub fn build_lq_chain(p: &ProblemSpec, q: f64) -> Result<LqChain> {
    let c = &p.constants;
    let ex = p.exponents();
    if !(q > ex.q_star) {
        return Err(Error::OutOfTheory { q, q_star: ex.q_star });
    }
    let (gamma, beta) = (c.gamma, c.beta);
    let m = p.m().max(1) as f64;
    let q_gamma = CriticalExponents::q_gamma(gamma, q);
    let sigma = q * (q - 1.0) / (q - beta);
    let q_prime = (sigma * q + beta * (q_gamma - sigma)) / ((q - beta) * (q_gamma - sigma));
    let e0 = eps0(p);
    let a = q * (c.lambda_diss - e0 * (c.n_diss + c.b1p * (m + 1.0) + 1.0));
    let omega = p.omega_measure();
    let h_pow = p.h_lp_pow(q)?;
    let le = e0.ln();
    let lo = omega.ln();
    let mut terms = vec![
        c.n_diss.ln() - (q - 2.0) / (gamma + 1.0) * le + lo,
        (c.b1p * m).ln() - q_prime * le + lo,
        c.b1p.ln() - (q - 1.0) / gamma * le + lo,
    ];
    if h_pow > 0.0 {
        terms.push(-(q - 1.0) / gamma * le + h_pow.ln());
    }
    let ln_c1 = log_sum_exp(&terms);
    let ln_c2 = log_sum_exp(&[q.ln() + ln_c1, (a * omega).ln()]);
    let ln_rho_q = 2f64.ln() + ln_c2 - q.ln() - c.lambda_diss.ln();
    let kappa_weight = e0 * q * m * c.b1p;
    let kernel = ExponentialKernel::new(1.0, a)?;
    let ineq = decay_constants(CHAIN_KAPPA, 1.0, &kernel, p.r())?;
    Ok(LqChain {
        q,
        q_gamma,
        sigma,
        q_prime,
        eps0: e0,
        a_eps0: a,
        c_eps_prime: ln_c1.exp(),
        c_eps_dprime: ln_c2.exp(),
        ln_rho_q,
        rho_q: ln_rho_q.exp(),
        lambda_q: ineq.lambda,
        kappa_weight,
        kappa_bound: CHAIN_KAPPA.min(kappa_weight / a),
        eta: ineq.eta,
        m_big: ineq.m_big,
        r: p.r(),
        inequality: ineq,
    })
}

/// `M e^{-λ_q t} ||φ||^q_{L^∞_q} + η ρ_q`.
pub fn lq_envelope(chain: &LqChain, t: f64, phi_lq_q: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("envelope time must be nonnegative, got {t}")));
    }
    Ok(chain.bound(t, phi_lq_q))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinfBall {
    pub rho_star: f64,
    /// Present only without delay (`r = 0`).
    pub lambda_star: Option<f64>,
    pub m1_log: f64,
}

pub fn linf_ball(p: &ProblemSpec) -> Result<LinfBall> {
    let c = &p.constants;
    let h = p
        .h_linf
        .ok_or_else(|| Error::IncompleteSpec("missing ||h||_∞ bound".into()))?;
    let e = eps0(p);
    let g = c.gamma;
    let rho_star = e.powf(-1.0 / (g + 1.0))
        + e.powf(-1.0 / (g - c.beta))
        + e.powf(-1.0 / g)
        + e.powf(-1.0 / g) * h.powf(1.0 / g)
        + 1.0;
    let m1_log = 7f64.ln() - 2f64.ln();
    let lambda_star = c.lambda_diss * (3f64.ln() - 2f64.ln()) / (4.0 * m1_log);
    Ok(LinfBall {
        rho_star,
        lambda_star: if p.r() == 0.0 { Some(lambda_star) } else { None },
        m1_log,
    })
}

pub fn linf_envelope(ball: &LinfBall, t: f64, phi_linf: f64, r: f64) -> f64 {
    match ball.lambda_star {
        Some(l) if r == 0.0 => (-l * t).exp() * phi_linf + ball.rho_star,
        _ => phi_linf + ball.rho_star,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvarianceReport {
    pub applicable: bool,
    pub entered: bool,
    pub t0: Option<f64>,
    pub phi_linf: f64,
}

pub fn eventual_invariance_check(traj: &Trajectory, ball: &LinfBall, eps: f64) -> Result<InvarianceReport> {
    let level = ball.rho_star + eps;
    let tol = 1e-9 * level;
    let grid = traj.grid();
    let hist = &traj.fields()[..=traj.zero_index()];
    let mut phi_linf: f64 = 0.0;
    for f in hist {
        phi_linf = phi_linf.max(grid.linf_norm(f)?);
    }
    if phi_linf > level + tol {
        return Ok(InvarianceReport { applicable: false, entered: false, t0: None, phi_linf });
    }
    let fw = traj.forward();
    let mut first_ok: Option<usize> = None;
    for (i, f) in fw.iter().enumerate() {
        if grid.linf_norm(f)? <= level + tol {
            if first_ok.is_none() {
                first_ok = Some(i);
            }
        } else {
            first_ok = None;
        }
    }
    Ok(InvarianceReport {
        applicable: true,
        entered: first_ok.is_some(),
        t0: first_ok.map(|i| i as f64 * traj.dt()),
        phi_linf,
    })
}

/// Norms of the initial datum over `[-r, 0]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhiNorms {
    pub q: f64,
    /// `sup_s |φ(s)|_q^q`
    pub lq_q: f64,
    pub linf: f64,
    /// `sup_s |∇φ(s)|²`
    pub v1_sq: f64,
    /// `sup_s |Δφ(s)|²`
    pub v2_sq: f64,
    /// `sup_s ∫|φ|^{q-2}|∇φ|²`
    pub mixed: f64,
}

impl PhiNorms {
    pub fn zero(q: f64) -> Self {
        Self { q, lq_q: 0.0, linf: 0.0, v1_sq: 0.0, v2_sq: 0.0, mixed: 0.0 }
    }

    /// Samples the history at its nodes and three interior points per interval.
    pub fn of_history(phi: &HistoryFunction, grid: &Grid, q: f64) -> Result<Self> {
        let times = phi.times();
        let mut samples = vec![times[0]];
        for w in times.windows(2) {
            for k in 1..=4 {
                samples.push(w[0] + (w[1] - w[0]) * k as f64 / 4.0);
            }
        }
        let mut out = Self::zero(q);
        for s in samples {
            let f = crate::model::sample_history(phi, s.min(0.0), grid.n_modes())?;
            out.absorb(grid, &f)?;
        }
        Ok(out)
    }

    /// Same sup taken over the stored history nodes of a trajectory.
    pub fn of_trajectory(traj: &Trajectory, q: f64) -> Result<Self> {
        let grid = traj.grid();
        let mut out = Self::of_history(traj.history(), grid, q)?;
        for f in &traj.fields()[..=traj.zero_index()] {
            out.absorb(grid, f)?;
        }
        Ok(out)
    }

    fn absorb(&mut self, grid: &Grid, f: &SpectralField) -> Result<()> {
        self.lq_q = self.lq_q.max(grid.lq_norm_pow(f, self.q)?);
        self.linf = self.linf.max(grid.linf_norm(f)?);
        self.v1_sq = self.v1_sq.max(grid.h1_norm(f)?.powi(2));
        self.v2_sq = self.v2_sq.max(grid.h2_norm(f)?.powi(2));
        self.mixed = self.mixed.max(grid.mixed_integral(f, self.q)?);
        Ok(())
    }

    /// `||φ||²_{C_{V₂}} + ||φ||^q_{L^∞_q} + sup_s ∫|φ|^{q-2}|∇φ|²`.
    pub fn h2_data(&self) -> f64 {
        self.v2_sq + self.lq_q + self.mixed
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct H1Constants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c_h: f64,
    pub delay_factor: f64,
    pub m_prime: f64,
    pub c6: f64,
}

/// `e₁(t) = ||φ||²_{C_{V₁}} e^{-μ₁t} + gain·||φ||^q_{L^∞_q} e^{-rate·t} + offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct H1Envelope {
    pub phi_v1_sq: f64,
    pub phi_lq_q: f64,
    pub mu1: f64,
    pub gain: f64,
    pub rate: f64,
    pub offset: f64,
    pub q: f64,
    pub constants: H1Constants,
}

impl H1Envelope {
    pub fn e1(&self, t: f64) -> f64 {
        self.phi_v1_sq * (-self.mu1 * t).exp()
            + self.gain * self.phi_lq_q * (-self.rate * t).exp()
            + self.offset
    }
}

/// Builds the `H¹` chain from `d/dt|∇u|² + μ₁|∇u|² <= 3(|f(u)|² + |G|² + |h|²)`,
/// the growth bounds on `f`, `g`, and the `L^q` envelope for `|u|_q^q`.
pub fn h1_envelope(p: &ProblemSpec, chain: &LqChain, phi: &PhiNorms) -> Result<H1Envelope> {
    let c = &p.constants;
    let q = chain.q;
    if !(q > 2.0 * c.alpha) || !(q > 2.0 * c.beta) {
        return Err(Error::Embedding(format!(
            "q = {q} must exceed 2α = {} and 2β = {}",
            2.0 * c.alpha,
            2.0 * c.beta
        )));
    }
    let h = p
        .h_linf
        .ok_or_else(|| Error::IncompleteSpec("missing ||h||_∞ bound".into()))?;
    let omega = p.omega_measure();
    let mf = p.m() as f64;
    let sa = 2.0 * c.alpha / q;
    let sb = 2.0 * c.beta / q;
    let c1 = 2.0 * c.a1 * c.a1 * omega.powf(1.0 - sa);
    let c2 = 2.0 * c.a1 * c.a1 * omega;
    let (c3, c4) = if p.m() == 0 {
        (0.0, 0.0)
    } else {
        (2.0 * mf * c.b1p * c.b1p * omega.powf(1.0 - sb), 2.0 * c.b1p * c.b1p * omega)
    };
    let c_h = omega * h * h;
    let mu1 = eigenvalue(1, p.length)?;
    let delay_factor = (sb * chain.lambda_q * chain.r).exp();
    let rate = (sa.min(sb) * chain.lambda_q).min(mu1 / 2.0);
    let b = chain.eta * chain.rho_q;
    let lin = c1 + mf * c3 * delay_factor;
    let m_prime = 3.0 * chain.m_big * lin;
    let c6 = 3.0 * (lin + c1 * b.powf(sa) + mf * c3 * b.powf(sb) + c2 + c4 + c_h);
    Ok(H1Envelope {
        phi_v1_sq: phi.v1_sq,
        phi_lq_q: phi.lq_q,
        mu1,
        gain: m_prime / (mu1 - rate),
        rate,
        offset: c6 / mu1,
        q,
        constants: H1Constants { c1, c2, c3, c4, c_h, delay_factor, m_prime, c6 },
    })
}

/// `e₂(t) >= ∫_t^{t+1}|Δu|²` and `e₃(t) >= ∫_t^{t+1}∫|u|^{q-2}|∇u|²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratedEnvelopes {
    pub h1: H1Envelope,
    pub chain: LqChain,
    pub phi_lq_q: f64,
}

impl IntegratedEnvelopes {
    pub fn e2(&self, t: f64) -> f64 {
        let h = &self.h1;
        let k = &h.constants;
        h.e1(t) + k.m_prime / h.rate * h.phi_lq_q * (-h.rate * t).exp() + k.c6
    }

    pub fn e3(&self, t: f64) -> f64 {
        let c = &self.chain;
        let kw = c.kappa_weight;
        let grow = (c.lambda_q * c.r).exp();
        let b = c.eta * c.rho_q;
        (c.m_big * self.phi_lq_q * (1.0 + kw * grow) * (-c.lambda_q * t).exp() + b * (1.0 + kw) + c.c_eps_dprime)
            / (c.q * (c.q - 1.0))
    }

    /// `C_T` with `∫_0^T∫|u|^{q-2}|∇u|² <= C_T(||φ||^q_{L^∞_q} + 1)`.
    pub fn c_t(&self, horizon: f64) -> f64 {
        let c = &self.chain;
        let kw = c.kappa_weight;
        let grow = (c.lambda_q * c.r).exp();
        let b = c.eta * c.rho_q;
        let a = 1.0 + kw * horizon * c.m_big * grow;
        let z = kw * horizon * b + c.c_eps_dprime * horizon;
        a.max(z) / (c.q * (c.q - 1.0))
    }
}

pub fn integrated_envelopes(h1: &H1Envelope, chain: &LqChain, phi: &PhiNorms) -> IntegratedEnvelopes {
    IntegratedEnvelopes { h1: *h1, chain: *chain, phi_lq_q: phi.lq_q }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum H2Form {
    /// `gain·D(φ)·e^{-rate·t} + offset`
    Decay,
    /// `sup_t |Δu|² <= offset`
    Bounded,
}

/// Envelope form for `|Δu(t)|²` with calibrated constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct H2Envelope {
    pub form: H2Form,
    pub data_gain: f64,
    pub rate: f64,
    pub offset: f64,
    /// Data norm of the calibration trajectory.
    pub data_norm: f64,
    pub calibrated: bool,
}

impl H2Envelope {
    pub fn bound(&self, t: f64, data_norm: f64) -> f64 {
        match self.form {
            H2Form::Decay => self.data_gain * data_norm * (-self.rate * t).exp() + self.offset,
            H2Form::Bounded => self.offset,
        }
    }
}

/// Calibrates the `|Δu|²` envelope on `calibration`: the offset is the tail
/// maximum over `[T/2, T]`, the gain the smallest factor (at least 1) making
/// the envelope dominate the whole run.
pub fn h2_envelope(
    p: &ProblemSpec,
    h1: &H1Envelope,
    calibration: &Trajectory,
    form: H2Form,
    rate: Option<f64>,
) -> Result<H2Envelope> {
    if form == H2Form::Decay && !p.separated {
        return Err(Error::FormUnavailable(
            "decay form needs a coupling with separated delays".into(),
        ));
    }
    let rate = rate.unwrap_or(h1.rate);
    if !(rate > 0.0) {
        return Err(Error::Domain(format!("rate must be positive, got {rate}")));
    }
    let phi = PhiNorms::of_trajectory(calibration, h1.q)?;
    let d = phi.h2_data();
    let obs = observe(calibration, NormSelector::LapSq)?;
    let t_end = obs.last().map(|x| x.0).unwrap_or(0.0);
    let (offset, data_gain) = match form {
        H2Form::Bounded => (obs.iter().map(|x| x.1).fold(0.0, f64::max), 0.0),
        H2Form::Decay => {
            let offset = obs.iter().filter(|x| x.0 >= t_end / 2.0).map(|x| x.1).fold(0.0, f64::max);
            let mut gain: f64 = 1.0;
            if d > 0.0 {
                for &(t, v) in &obs {
                    gain = gain.max((v - offset).max(0.0) * (rate * t).exp() / d);
                }
            }
            (offset, gain)
        }
    };
    Ok(H2Envelope { form, data_gain, rate, offset, data_norm: d, calibrated: true })
}

/// Observable compared against an envelope.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormSelector {
    /// `|u|_q^q`
    LqPow(f64),
    /// `|u|_∞` on the quadrature grid
    Linf,
    /// `|∇u|²`
    GradSq,
    /// `|Δu|²`
    LapSq,
    /// `∫_t^{t+1}|Δu|² ds`
    IntLapSq,
    /// `∫_t^{t+1}∫|u|^{q-2}|∇u|² dx ds`
    IntMixed(f64),
}

impl NormSelector {
    pub fn name(&self) -> String {
        match self {
            NormSelector::LqPow(q) => format!("lq_pow_{q}"),
            NormSelector::Linf => "linf".into(),
            NormSelector::GradSq => "grad_sq".into(),
            NormSelector::LapSq => "lap_sq".into(),
            NormSelector::IntLapSq => "int_lap_sq".into(),
            NormSelector::IntMixed(q) => format!("int_mixed_{q}"),
        }
    }
}

/// `(t, observable)` on the forward nodes; windowed observables stop at `T - 1`.
pub fn observe(traj: &Trajectory, sel: NormSelector) -> Result<Vec<(f64, f64)>> {
    let g = traj.grid();
    let fw = traj.forward();
    let dt = traj.dt();
    let pointwise = |norm: &dyn Fn(&SpectralField) -> Result<f64>| -> Result<Vec<(f64, f64)>> {
        fw.iter().enumerate().map(|(i, f)| Ok((i as f64 * dt, norm(f)?))).collect()
    };
    let windowed = |vals: Vec<f64>| -> Vec<(f64, f64)> {
        let w = (1.0 / dt).round() as usize;
        if vals.len() <= w {
            return vec![];
        }
        let mut cum = vec![0.0; vals.len()];
        for i in 1..vals.len() {
            cum[i] = cum[i - 1] + 0.5 * dt * (vals[i - 1] + vals[i]);
        }
        (0..vals.len() - w).map(|i| (i as f64 * dt, cum[i + w] - cum[i])).collect()
    };
    Ok(match sel {
        NormSelector::LqPow(q) => pointwise(&|f| g.lq_norm_pow(f, q))?,
        NormSelector::Linf => pointwise(&|f| g.linf_norm(f))?,
        NormSelector::GradSq => pointwise(&|f| Ok(g.h1_norm(f)?.powi(2)))?,
        NormSelector::LapSq => pointwise(&|f| Ok(g.h2_norm(f)?.powi(2)))?,
        NormSelector::IntLapSq => {
            let v: Result<Vec<f64>> = fw.iter().map(|f| Ok(g.h2_norm(f)?.powi(2))).collect();
            windowed(v?)
        }
        NormSelector::IntMixed(q) => {
            let v: Result<Vec<f64>> = fw.iter().map(|f| g.mixed_integral(f, q)).collect();
            windowed(v?)
        }
    })
}

pub trait Envelope {
    fn bound(&self, t: f64) -> f64;
    fn selector(&self) -> NormSelector;
}

pub struct LqBound {
    pub chain: LqChain,
    pub phi_lq_q: f64,
    /// Multiplies `ρ_q`; 1 outside of forced-failure experiments.
    pub rho_scale: f64,
}

impl Envelope for LqBound {
    fn bound(&self, t: f64) -> f64 {
        let c = &self.chain;
        c.m_big * (-c.lambda_q * t).exp() * self.phi_lq_q + c.eta * c.rho_q * self.rho_scale
    }
    fn selector(&self) -> NormSelector {
        NormSelector::LqPow(self.chain.q)
    }
}

pub struct LinfBound {
    pub ball: LinfBall,
    pub phi_linf: f64,
    pub r: f64,
}

impl Envelope for LinfBound {
    fn bound(&self, t: f64) -> f64 {
        linf_envelope(&self.ball, t, self.phi_linf, self.r)
    }
    fn selector(&self) -> NormSelector {
        NormSelector::Linf
    }
}

impl Envelope for H1Envelope {
    fn bound(&self, t: f64) -> f64 {
        self.e1(t)
    }
    fn selector(&self) -> NormSelector {
        NormSelector::GradSq
    }
}

pub struct E2Bound(pub IntegratedEnvelopes);

impl Envelope for E2Bound {
    fn bound(&self, t: f64) -> f64 {
        self.0.e2(t)
    }
    fn selector(&self) -> NormSelector {
        NormSelector::IntLapSq
    }
}

pub struct E3Bound(pub IntegratedEnvelopes);

impl Envelope for E3Bound {
    fn bound(&self, t: f64) -> f64 {
        self.0.e3(t)
    }
    fn selector(&self) -> NormSelector {
        NormSelector::IntMixed(self.0.chain.q)
    }
}

pub struct H2Bound {
    pub envelope: H2Envelope,
    pub data_norm: f64,
}

impl Envelope for H2Bound {
    fn bound(&self, t: f64) -> f64 {
        self.envelope.bound(t, self.data_norm)
    }
    fn selector(&self) -> NormSelector {
        NormSelector::LapSq
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { rel: 1e-6, abs: 1e-12 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopeRow {
    pub t: f64,
    pub observed: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeReport {
    pub norm: String,
    pub rows: Vec<EnvelopeRow>,
    pub violations: usize,
    pub worst_margin: f64,
    pub first_violation: Option<f64>,
}

impl EnvelopeReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,observed,bound,margin\n");
        for r in &self.rows {
            let _ = writeln!(s, "{:.16e},{:.16e},{:.16e},{:.16e}", r.t, r.observed, r.bound, r.margin);
        }
        s
    }
}

pub fn check_envelope(
    traj: &Trajectory,
    env: &dyn Envelope,
    sel: NormSelector,
    tol: Tolerance,
) -> Result<EnvelopeReport> {
    if sel != env.selector() {
        return Err(Error::Mismatch(format!(
            "envelope bounds {} but {} was requested",
            env.selector().name(),
            sel.name()
        )));
    }
    let obs = observe(traj, sel)?;
    let mut rows = Vec::with_capacity(obs.len());
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut first = None;
    for (t, v) in obs {
        let b = env.bound(t);
        let margin = b + tol.rel * b.abs() + tol.abs - v;
        if !(margin >= 0.0) {
            violations += 1;
            first.get_or_insert(t);
        }
        worst = worst.min(margin);
        rows.push(EnvelopeRow { t, observed: v, bound: b, margin });
    }
    Ok(EnvelopeReport { norm: sel.name(), rows, violations, worst_margin: worst, first_violation: first })
}

/// Plain-text table `name  value  formula`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstantLedger {
    pub entries: Vec<(String, f64, String)>,
}

impl ConstantLedger {
    pub fn push(&mut self, name: &str, value: f64, formula: &str) {
        self.entries.push((name.to_string(), value, formula.to_string()));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == name).map(|e| e.1)
    }

    pub fn add_chain(&mut self, c: &LqChain) {
        self.push("q", c.q, "integrability exponent");
        self.push("q_gamma", c.q_gamma, "q - 1 + γ");
        self.push("sigma", c.sigma, "q(q-1)/(q-β)");
        self.push("q_prime", c.q_prime, "(σq + β(q_γ-σ))/((q-β)(q_γ-σ))");
        self.push("eps0", c.eps0, "½·min(Λ/(2(N+b₁'(m+1)+1)), Λ/(4mb₁'))");
        self.push("a_eps0", c.a_eps0, "q(Λ - ε₀(N+b₁'(m+1)+1))");
        self.push("c_eps_prime", c.c_eps_prime, "(Nε^{-(q-2)/(γ+1)} + b₁'(mε^{-q'} + ε^{-(q-1)/γ}))|Ω| + ε^{-(q-1)/γ}||h||^{q_γ/γ}");
        self.push("c_eps_dprime", c.c_eps_dprime, "q·C' + a|Ω|");
        self.push("rho_q", c.rho_q, "2C''/(qΛ)");
        self.push("ln_rho_q", c.ln_rho_q, "ln ρ_q");
        self.push("lambda_q", c.lambda_q, "(ln3-ln2)·a/(2(ln7-ln2 + r·a))");
        self.push("kappa_weight", c.kappa_weight, "ε₀qmb₁'");
        self.push("kappa_bound", c.kappa_bound, "min(1/4, ε₀qmb₁'/a)");
        self.push("eta", c.eta, "(μ+1)/(1-κc)");
        self.push("m_big", c.m_big, "c·sqrt(2/(1+κc))");
    }

    pub fn add_ball(&mut self, b: &LinfBall) {
        self.push("rho_star", b.rho_star, "ε₀^{-1/(γ+1)} + ε₀^{-1/(γ-β)} + ε₀^{-1/γ}(1 + ||h||^{1/γ}) + 1");
        if let Some(l) = b.lambda_star {
            self.push("lambda_star", l, "Λ(ln3-ln2)/(4(ln7-ln2))");
        }
        self.push("m1_log", b.m1_log, "ln7 - ln2");
    }

    pub fn add_h1(&mut self, h: &H1Envelope) {
        let k = &h.constants;
        self.push("C1", k.c1, "2a₁²|Ω|^{1-2α/q}");
        self.push("C2", k.c2, "2a₁²|Ω|");
        self.push("C3", k.c3, "2mb₁'²|Ω|^{1-2β/q}");
        self.push("C4", k.c4, "2b₁'²|Ω|");
        self.push("C_h", k.c_h, "|Ω|·||h||²_∞");
        self.push("delay_factor", k.delay_factor, "exp((2β/q)λ_q r)");
        self.push("M_prime", k.m_prime, "3M(C1 + mC3·delay_factor)");
        self.push("C6", k.c6, "3(C1 + mC3·df + C1·B^{2α/q} + mC3·B^{2β/q} + C2 + C4 + C_h), B = ηρ_q");
        self.push("mu1", h.mu1, "(π/L)²");
        self.push("lambda_prime", h.rate, "min((2min(α,β)/q)λ_q, μ₁/2)");
        self.push("h1_gain", h.gain, "M'/(μ₁ - λ')");
        self.push("rho1", h.offset, "C6/μ₁");
    }

    pub fn add_h2(&mut self, h: &H2Envelope) {
        self.push("h2_gain", h.data_gain, "calibrated");
        self.push("h2_rate", h.rate, "λ'");
        self.push("h2_offset", h.offset, "calibrated");
    }

    pub fn to_text(&self) -> String {
        let w = self.entries.iter().map(|e| e.0.len()).max().unwrap_or(4).max(4);
        let mut s = format!("{:<w$}  {:>24}  formula\n", "name", "value");
        for (n, v, f) in &self.entries {
            let _ = writeln!(s, "{n:<w$}  {v:>24.16e}  {f}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::model::{
        ConstantOverrides, DeclaredConstants, DelayCoupling, DelayFn, DelaySpec, Forcing, HistorySpec,
        Reaction, TimeProfile,
    };
    use crate::solver::{solve, SolverConfig};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const DECL: DeclaredConstants =
        DeclaredConstants { lambda_diss: 1.0, n_diss: 1.0, gamma: 3.0, alpha: 3.0, a0: 3.0, beta: 1.0 };

    fn problem(g: DelayCoupling, r: f64, h: Forcing, ov: ConstantOverrides) -> ProblemSpec {
        let delays = DelaySpec::new(r, vec![DelayFn::Constant(r)]).unwrap();
        ProblemSpec::new(PI, Reaction::Cubic { coef: 1.0, growth: 0.0 }, g, true, delays, h, None, None, DECL, ov)
            .unwrap()
    }

    fn benchmark() -> ProblemSpec {
        problem(DelayCoupling::Linear { gain: 0.5 }, 1.0, Forcing::Zero, ConstantOverrides::default())
    }

    #[test]
    fn chain_benchmark_values() {
        let c = build_lq_chain(&benchmark(), 8.0).unwrap();
        assert_relative_eq!(c.eps0, 1.0 / 12.0, max_relative = 1e-15);
        assert_relative_eq!(c.a_eps0, 6.0, max_relative = 1e-15);
        assert_relative_eq!(c.sigma, 8.0, max_relative = 1e-15);
        assert_relative_eq!(c.q_prime, 33.0 / 7.0, max_relative = 1e-15);
        assert_relative_eq!(c.kappa_bound, 1.0 / 18.0, max_relative = 1e-15);
        assert_relative_eq!(c.eta, 3.5, max_relative = 1e-15);
        assert_relative_eq!(c.m_big, 4.0 / 6f64.sqrt(), max_relative = 1e-15);
        let lam = (3f64.ln() - 2f64.ln()) / (2.0 * (3.5f64.ln() + 6.0)) * 6.0;
        assert_relative_eq!(c.lambda_q, lam, max_relative = 1e-14);
        assert!((c.lambda_q - 0.1677).abs() < 1e-4);
        // oracle: C', C'' and ρ_q directly in linear space
        let e: f64 = 1.0 / 12.0;
        let cp = (e.powf(-6.0 / 4.0) + 0.5 * (e.powf(-33.0 / 7.0) + e.powf(-7.0 / 3.0))) * PI;
        assert_relative_eq!(c.c_eps_prime, cp, max_relative = 1e-12);
        let cpp = 8.0 * cp + 6.0 * PI;
        assert_relative_eq!(c.c_eps_dprime, cpp, max_relative = 1e-12);
        assert_relative_eq!(c.rho_q, 2.0 * cpp / 8.0, max_relative = 1e-12);
    }

    #[test]
    fn chain_rejects_q_at_or_below_q_star() {
        for q in [6.0, 4.0] {
            assert!(matches!(build_lq_chain(&benchmark(), q), Err(Error::OutOfTheory { .. })));
        }
        assert!(build_lq_chain(&benchmark(), 6.0 + 1e-9).is_ok());
    }

    #[test]
    fn chain_degenerate_coupling() {
        let p = problem(DelayCoupling::Zero, 1.0, Forcing::Zero, ConstantOverrides::default());
        let c = build_lq_chain(&p, 8.0).unwrap();
        assert_relative_eq!(c.eps0, 1.0 / (4.0 * (1.0 + 2e-12 + 1.0)), max_relative = 1e-14);
        assert!(c.rho_q.is_finite() && c.rho_q > 0.0);
    }

    #[test]
    fn lq_envelope_examples() {
        let c = build_lq_chain(&benchmark(), 8.0).unwrap();
        assert_relative_eq!(lq_envelope(&c, 0.0, 1.0).unwrap(), 4.0 / 6f64.sqrt() + 3.5 * c.rho_q, max_relative = 1e-14);
        assert_relative_eq!(lq_envelope(&c, 1e6, 1.0).unwrap(), 3.5 * c.rho_q, max_relative = 1e-14);
        assert_relative_eq!(lq_envelope(&c, 3.0, 0.0).unwrap(), 3.5 * c.rho_q, max_relative = 1e-14);
        assert!(lq_envelope(&c, -1.0, 0.0).is_err());
    }

    #[test]
    fn linf_ball_examples() {
        let b = linf_ball(&benchmark()).unwrap();
        let exp = 12f64.powf(0.25) + 12f64.sqrt() + 12f64.powf(1.0 / 3.0) + 1.0;
        assert_relative_eq!(b.rho_star, exp, max_relative = 1e-14);
        assert!(b.lambda_star.is_none());
        let h = Forcing::Constant { value: 2.0 };
        let ph = problem(DelayCoupling::Linear { gain: 0.5 }, 1.0, h, ConstantOverrides::default());
        let mut ph = ph;
        ph.h_linf = Some(2.0);
        let bh = linf_ball(&ph).unwrap();
        assert_relative_eq!(bh.rho_star - b.rho_star, 12f64.powf(1.0 / 3.0) * 2f64.powf(1.0 / 3.0), max_relative = 1e-12);
        let d0 = DelaySpec::new(0.0, vec![DelayFn::Constant(0.0)]).unwrap();
        let p0 = ProblemSpec::new(
            PI,
            Reaction::Cubic { coef: 1.0, growth: 0.0 },
            DelayCoupling::Linear { gain: 0.5 },
            true,
            d0,
            Forcing::Zero,
            None,
            None,
            DECL,
            ConstantOverrides::default(),
        )
        .unwrap();
        let b0 = linf_ball(&p0).unwrap();
        let l = b0.lambda_star.unwrap();
        assert!((l - 0.0809).abs() < 1e-4);
        assert_relative_eq!(l, (1.5f64).ln() / (4.0 * 3.5f64.ln()), max_relative = 1e-14);
        assert_eq!(linf_envelope(&b, 3.0, 2.0, 1.0), 2.0 + b.rho_star);
        assert_eq!(linf_envelope(&b0, 0.0, 2.0, 0.0), 2.0 + b0.rho_star);
        assert_relative_eq!(linf_envelope(&b0, 1e5, 2.0, 0.0), b0.rho_star);
        let mut missing = ph.clone();
        missing.h_linf = None;
        assert!(matches!(linf_ball(&missing), Err(Error::IncompleteSpec(_))));
    }

    fn run(p: &ProblemSpec, modes: Vec<(usize, f64)>, dt: f64, t: f64, n: usize) -> Trajectory {
        let phi = HistorySpec { modes, profile: TimeProfile::Constant }.build(p.r(), n).unwrap();
        solve(p, &phi, &SolverConfig::new(dt, t, n, 4 * n)).unwrap()
    }

    fn zero_problem(r: f64) -> ProblemSpec {
        let delays = if r == 0.0 { DelaySpec::new(0.0, vec![]).unwrap() } else {
            DelaySpec::new(r, vec![DelayFn::Constant(r)]).unwrap()
        };
        ProblemSpec::new(PI, Reaction::Zero, DelayCoupling::Zero, true, delays, Forcing::Zero, None, None, DECL,
            ConstantOverrides::default()).unwrap()
    }

    #[test]
    fn eventual_invariance_examples() {
        let b = linf_ball(&benchmark()).unwrap();
        let z = run(&zero_problem(0.0), vec![], 0.01, 1.0, 4);
        let rep = eventual_invariance_check(&z, &b, 0.1).unwrap();
        assert!(rep.applicable && rep.entered);
        assert_eq!(rep.t0, Some(0.0));
        let heat = run(&zero_problem(0.0), vec![(1, b.rho_star)], 0.01, 1.0, 4);
        let rep = eventual_invariance_check(&heat, &b, 0.0).unwrap();
        assert!(rep.applicable && rep.entered);
        assert_eq!(rep.t0, Some(0.0));
        let big = run(&zero_problem(0.0), vec![(1, 2.0 * b.rho_star)], 0.01, 1.0, 4);
        assert!(!eventual_invariance_check(&big, &b, 0.0).unwrap().applicable);
    }

    #[test]
    fn h1_degenerate_collapses() {
        let mut p = zero_problem(1.0);
        p.constants.a1 = 0.0;
        p.constants.b1p = 0.0;
        // the chain itself needs positive constants; build it on the benchmark
        let chain = build_lq_chain(&benchmark(), 8.0).unwrap();
        let phi = PhiNorms { v1_sq: 2.0, lq_q: 1.0, ..PhiNorms::zero(8.0) };
        let h = h1_envelope(&p, &chain, &phi).unwrap();
        assert_eq!(h.gain, 0.0);
        assert_eq!(h.offset, 0.0);
        assert_relative_eq!(h.e1(1.5), 2.0 * (-1.5f64).exp());
        let int = integrated_envelopes(&h, &chain, &phi);
        assert_relative_eq!(int.e2(1.0), 2.0 * (-1.0f64).exp());
    }

    #[test]
    fn h1_benchmark_c1_with_override() {
        let ov = ConstantOverrides { a1: Some(1.0), ..Default::default() };
        let p = problem(DelayCoupling::Linear { gain: 0.5 }, 1.0, Forcing::Zero, ov);
        crate::model::check_f(&p.f, &p.constants, 20.0, 4001).unwrap();
        let chain = build_lq_chain(&p, 8.0).unwrap();
        let h = h1_envelope(&p, &chain, &PhiNorms::zero(8.0)).unwrap();
        assert_relative_eq!(h.constants.c1, 2.0 * PI.powf(0.25), max_relative = 1e-14);
        assert!(h.rate <= h.mu1 / 2.0);
    }

    #[test]
    fn h1_embedding_guard() {
        let mut p = benchmark();
        let chain = build_lq_chain(&p, 8.0).unwrap();
        p.constants.alpha = 4.0;
        assert!(matches!(h1_envelope(&p, &chain, &PhiNorms::zero(8.0)), Err(Error::Embedding(_))));
    }

    #[test]
    fn rho_q_root_trend_toward_ball() {
        let p = benchmark();
        let b = linf_ball(&p).unwrap();
        let roots: Vec<f64> = [8.0, 16.0, 32.0, 64.0, 128.0]
            .iter()
            .map(|&q| build_lq_chain(&p, q).unwrap().rho_q_root())
            .collect();
        for w in roots.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(*roots.last().unwrap() <= 1.05 * b.rho_star);
        // the far tail in log space, where ρ_q itself overflows
        let far = build_lq_chain(&p, 4096.0).unwrap();
        assert!(far.rho_q_root().is_finite() && far.rho_q_root() <= b.rho_star);
    }

    #[test]
    fn check_envelope_examples() {
        let z = run(&zero_problem(0.0), vec![], 0.01, 1.0, 4);
        let chain = build_lq_chain(&benchmark(), 8.0).unwrap();
        let env = LqBound { chain, phi_lq_q: 0.0, rho_scale: 1.0 };
        let rep = check_envelope(&z, &env, NormSelector::LqPow(8.0), Tolerance::default()).unwrap();
        assert_eq!(rep.violations, 0);
        assert!(matches!(
            check_envelope(&z, &env, NormSelector::LqPow(10.0), Tolerance::default()),
            Err(Error::Mismatch(_))
        ));

        let heat = run(&zero_problem(0.0), vec![(1, 1.0)], 0.01, 2.0, 4);
        let env = H1Envelope {
            phi_v1_sq: PI / 2.0,
            phi_lq_q: 0.0,
            mu1: 1.0,
            gain: 0.0,
            rate: 0.5,
            offset: 0.0,
            q: 8.0,
            constants: H1Constants { c1: 0.0, c2: 0.0, c3: 0.0, c4: 0.0, c_h: 0.0, delay_factor: 1.0, m_prime: 0.0, c6: 0.0 },
        };
        let rep = check_envelope(&heat, &env, NormSelector::GradSq, Tolerance::default()).unwrap();
        assert_eq!(rep.violations, 0);
        // π/2·(e^{-t} - e^{-2t}) peaks at t = ln 2 and shrinks afterwards
        let peak = rep.rows.iter().map(|r| r.margin).fold(0.0, f64::max);
        assert!(rep.rows.last().unwrap().margin < 0.5 * peak);
    }

    #[test]
    fn h2_forms() {
        let p = benchmark();
        let chain = build_lq_chain(&p, 8.0).unwrap();
        let heat = run(&zero_problem(0.0), vec![(1, 1.0)], 0.01, 4.0, 4);
        let phi = PhiNorms::of_trajectory(&heat, 8.0).unwrap();
        let h1 = h1_envelope(&p, &chain, &phi).unwrap();
        let z0 = zero_problem(0.0);
        let env = h2_envelope(&z0, &h1, &heat, H2Form::Decay, Some(1.0)).unwrap();
        assert_eq!(env.data_gain, 1.0);
        assert_relative_eq!(env.offset, PI / 2.0 * (-4.0f64).exp(), max_relative = 1e-6);
        let rep = check_envelope(
            &heat,
            &H2Bound { envelope: env, data_norm: env.data_norm },
            NormSelector::LapSq,
            Tolerance::default(),
        )
        .unwrap();
        assert_eq!(rep.violations, 0);

        let zero = run(&z0, vec![], 0.01, 1.0, 4);
        let envz = h2_envelope(&z0, &h1, &zero, H2Form::Decay, None).unwrap();
        assert_eq!(envz.offset, 0.0);

        let mut ns = p.clone();
        ns.separated = false;
        ns.g = DelayCoupling::SinOfSum { amp: 0.5 };
        assert!(matches!(h2_envelope(&ns, &h1, &heat, H2Form::Decay, None), Err(Error::FormUnavailable(_))));
        assert!(h2_envelope(&ns, &h1, &heat, H2Form::Bounded, None).is_ok());
    }

    #[test]
    fn ledger_text() {
        let mut l = ConstantLedger::default();
        l.add_chain(&build_lq_chain(&benchmark(), 8.0).unwrap());
        let t = l.to_text();
        assert!(t.starts_with("name"));
        assert!(t.lines().any(|x| x.starts_with("eps0")));
        assert_eq!(l.get("a_eps0"), Some(6.0));
    }

    fn arb_spec() -> impl Strategy<Value = (ProblemSpec, f64)> {
        (
            0.2f64..5.0,
            0.1f64..5.0,
            1.5f64..5.0,
            0.0f64..0.9,
            0.05f64..3.0,
            1usize..4,
            0.0f64..2.0,
            1.0f64..20.0,
        )
            .prop_map(|(lam, n, gamma, bfrac, gain, m, r, dq)| {
                let beta = 1.0 + bfrac * (gamma - 1.0) * 0.9;
                let decl = DeclaredConstants { lambda_diss: lam, n_diss: n, gamma, alpha: 1.5, a0: 1.0, beta };
                let delays = DelaySpec::new(r, vec![DelayFn::Constant(r); m]).unwrap();
                let p = ProblemSpec::new(
                    1.0 + r,
                    Reaction::Zero,
                    DelayCoupling::Linear { gain },
                    true,
                    delays,
                    Forcing::Zero,
                    None,
                    None,
                    decl,
                    ConstantOverrides { a1: Some(1.0), b0p: Some(gain), b1p: Some(gain), ..Default::default() },
                )
                .unwrap();
                let q = p.exponents().q_star + dq;
                (p, q)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn chain_invariants((p, q) in arb_spec()) {
            let c = build_lq_chain(&p, q).unwrap();
            let k = &p.constants;
            let m = p.m() as f64;
            prop_assert!(k.lambda_diss / 2.0 >= c.eps0 * (k.n_diss + k.b1p * (m + 1.0) + 1.0) * (1.0 - 1e-12));
            prop_assert!(c.a_eps0 >= q * k.lambda_diss / 2.0 * (1.0 - 1e-12));
            prop_assert!(c.kappa_bound <= 0.25);
            prop_assert!(c.kappa_weight / c.a_eps0 <= 0.25 + 1e-12);
            prop_assert!(c.rho_q > 0.0 && c.lambda_q > 0.0 && c.q_prime > 0.0);
        }

        #[test]
        fn envelopes_monotone((p, q) in arb_spec(), t in 0.0f64..50.0, dt in 0.0f64..10.0, a in 0.0f64..5.0, da in 0.0f64..5.0) {
            let c = build_lq_chain(&p, q).unwrap();
            prop_assert!(c.bound(t + dt, a) <= c.bound(t, a));
            prop_assert!(c.bound(t, a) <= c.bound(t, a + da));
            let phi = PhiNorms { v1_sq: a, lq_q: a, ..PhiNorms::zero(q) };
            let phi2 = PhiNorms { v1_sq: a + da, lq_q: a + da, ..PhiNorms::zero(q) };
            let h = h1_envelope(&p, &c, &phi).unwrap();
            let h2 = h1_envelope(&p, &c, &phi2).unwrap();
            prop_assert!(h.e1(t + dt) <= h.e1(t));
            prop_assert!(h.e1(t) <= h2.e1(t));
            let i = integrated_envelopes(&h, &c, &phi);
            prop_assert!(i.e2(t + dt) <= i.e2(t));
            prop_assert!(i.e3(t + dt) <= i.e3(t));
            let b = linf_ball(&p).unwrap();
            prop_assert!(linf_envelope(&b, t + dt, a, p.r()) <= linf_envelope(&b, t, a, p.r()));
        }
    }
}
