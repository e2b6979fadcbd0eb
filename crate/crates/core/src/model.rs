//! Problem data: reaction term `f`, delay coupling `g`, delays `r_i(t)`,
//! forcing `h` and the initial history `φ`, together with sampled checks of the
//! structure conditions
//!
//! ```text
//! (F0)  f(s)s <= -Λ|s|^{γ+1} + N
//! (F1)  |f'(s)| <= a₀(|s|^{α-1} + 1)
//! (G1)  |∇g(v)| <= b₀(|v|^{β-1} + 1)
//! ```
//!
//! and of the max-norm growth bounds `|∇g(v)| <= b₀'(||v||_*^{β-1} + 1)`,
//! `|g(v)| <= b₁'(||v||_*^β + 1)` that feed the estimate constants.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::spectral::{Grid, SpectralField};

/// Floor for `b₀'`, `b₁'` when `g` vanishes identically.
pub const DELAY_CONSTANT_FLOOR: f64 = 1e-12;
/// Inflation applied to empirically measured growth constants.
pub const EMPIRICAL_INFLATION: f64 = 1.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StructureConstants {
    pub lambda_diss: f64,
    pub n_diss: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub a0: f64,
    pub a1: f64,
    pub beta: f64,
    pub b0: f64,
    pub b1: f64,
    pub b0p: f64,
    pub b1p: f64,
}

impl StructureConstants {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::semantic(name, format!("must be positive and finite, got {v}")))
            }
        };
        pos("lambda", self.lambda_diss)?;
        pos("N", self.n_diss)?;
        pos("a0", self.a0)?;
        pos("a1", self.a1)?;
        pos("b0", self.b0)?;
        pos("b1", self.b1)?;
        pos("b0p", self.b0p)?;
        pos("b1p", self.b1p)?;
        if !(self.gamma > 1.0) {
            return Err(Error::InvalidExponents(format!("γ > 1 required, got {}", self.gamma)));
        }
        if !(self.alpha >= 1.0) {
            return Err(Error::InvalidExponents(format!("α >= 1 required, got {}", self.alpha)));
        }
        if !(self.beta >= 1.0) {
            return Err(Error::InvalidExponents(format!("β >= 1 required, got {}", self.beta)));
        }
        if self.beta >= self.gamma {
            return Err(Error::InvalidExponents("β < γ required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticalExponents {
    pub p_star: f64,
    pub q_star: f64,
}

impl CriticalExponents {
    pub fn q_gamma(gamma: f64, q: f64) -> f64 {
        q - 1.0 + gamma
    }
}

/// `p* = β(γ-1)/(γ-β)`, `q* = max(p*, 2α, 2β)`.
pub fn critical_exponents(gamma: f64, beta: f64, alpha: f64) -> Result<CriticalExponents> {
    if !(gamma > 1.0) {
        return Err(Error::InvalidExponents(format!("γ > 1 required, got {gamma}")));
    }
    if !(alpha >= 1.0) {
        return Err(Error::InvalidExponents(format!("α >= 1 required, got {alpha}")));
    }
    if !(beta >= 1.0) {
        return Err(Error::InvalidExponents(format!("β >= 1 required, got {beta}")));
    }
    if beta >= gamma {
        return Err(Error::InvalidExponents("β < γ required".into()));
    }
    let p_star = beta * (gamma - 1.0) / (gamma - beta);
    let q_star = p_star.max(2.0 * alpha).max(2.0 * beta);
    Ok(CriticalExponents { p_star, q_star })
}

pub trait ScalarFn {
    fn value(&self, s: f64) -> f64;
    /// Analytic derivative when available.
    fn derivative(&self, _s: f64) -> Option<f64> {
        None
    }
}

pub trait VectorFn {
    fn value(&self, v: &[f64]) -> f64;
    /// Writes the analytic gradient into `out`; returns `false` if unavailable.
    fn gradient(&self, _v: &[f64], _out: &mut [f64]) -> bool {
        false
    }
}

/// Black-box scalar function; derivatives fall back to central differences.
pub struct FnScalar<F>(pub F);

impl<F: Fn(f64) -> f64> ScalarFn for FnScalar<F> {
    fn value(&self, s: f64) -> f64 {
        (self.0)(s)
    }
}

pub struct FnVector<F>(pub F);

impl<F: Fn(&[f64]) -> f64> VectorFn for FnVector<F> {
    fn value(&self, v: &[f64]) -> f64 {
        (self.0)(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reaction {
    /// `f(s) = growth·s - coef·s³`
    Cubic { coef: f64, growth: f64 },
    /// `f(s) = -coef·|s|^{p-1}s`
    Power { p: f64, coef: f64 },
    /// `f(s) = gain·s`
    Linear { gain: f64 },
    Zero,
}

impl ScalarFn for Reaction {
    fn value(&self, s: f64) -> f64 {
        match *self {
            Reaction::Cubic { coef, growth } => growth * s - coef * s * s * s,
            Reaction::Power { p, coef } => -coef * s.abs().powf(p - 1.0) * s,
            Reaction::Linear { gain } => gain * s,
            Reaction::Zero => 0.0,
        }
    }

    fn derivative(&self, s: f64) -> Option<f64> {
        Some(match *self {
            Reaction::Cubic { coef, growth } => growth - 3.0 * coef * s * s,
            Reaction::Power { p, coef } => -coef * p * s.abs().powf(p - 1.0),
            Reaction::Linear { gain } => gain,
            Reaction::Zero => 0.0,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DelayCoupling {
    /// `g(v) = gain·Σ v_i`
    Linear { gain: f64 },
    /// `g(v) = amp·Σ sin v_i`
    SinSum { amp: f64 },
    /// `g(v) = coef·Σ |v_i|^{p-1} v_i`
    Power { p: f64, coef: f64 },
    /// `g(v) = amp·sin(Σ v_i)`; not of separated form.
    SinOfSum { amp: f64 },
    Zero,
}

impl DelayCoupling {
    pub fn is_separable(&self) -> bool {
        !matches!(self, DelayCoupling::SinOfSum { .. })
    }

    /// Per-argument term `g_i` for separable couplings.
    pub fn term(&self, v: f64) -> f64 {
        match *self {
            DelayCoupling::Linear { gain } => gain * v,
            DelayCoupling::SinSum { amp } => amp * v.sin(),
            DelayCoupling::Power { p, coef } => coef * v.abs().powf(p - 1.0) * v,
            DelayCoupling::SinOfSum { amp } => amp * v.sin(),
            DelayCoupling::Zero => 0.0,
        }
    }

    fn term_derivative(&self, v: f64) -> f64 {
        match *self {
            DelayCoupling::Linear { gain } => gain,
            DelayCoupling::SinSum { amp } => amp * v.cos(),
            DelayCoupling::Power { p, coef } => coef * p * v.abs().powf(p - 1.0),
            DelayCoupling::SinOfSum { amp } => amp * v.cos(),
            DelayCoupling::Zero => 0.0,
        }
    }

    /// Closed-form `(b₀', b₁')` where the kind admits one.
    pub fn analytic_bounds(&self, m: usize, beta: f64) -> Option<(f64, f64)> {
        let mf = m.max(1) as f64;
        // inf over v of (||v||^{β-1} + 1)
        let bracket = if beta == 1.0 { 2.0 } else { 1.0 };
        let floor = |x: f64| x.max(DELAY_CONSTANT_FLOOR);
        match *self {
            DelayCoupling::Linear { gain } => {
                Some((floor(gain.abs() * mf.sqrt() / bracket), floor(gain.abs() * mf)))
            }
            DelayCoupling::SinSum { amp } => {
                Some((floor(amp.abs() * mf.sqrt() / bracket), floor(amp.abs() * mf)))
            }
            DelayCoupling::SinOfSum { amp } => {
                Some((floor(amp.abs() * mf.sqrt() / bracket), floor(amp.abs())))
            }
            DelayCoupling::Power { p, coef } if p == beta => {
                let b0p = coef.abs() * p * mf.sqrt();
                Some((floor(if p == 1.0 { b0p / 2.0 } else { b0p }), floor(coef.abs() * mf)))
            }
            DelayCoupling::Power { .. } => None,
            DelayCoupling::Zero => Some((DELAY_CONSTANT_FLOOR, DELAY_CONSTANT_FLOOR)),
        }
    }
}

impl VectorFn for DelayCoupling {
    fn value(&self, v: &[f64]) -> f64 {
        match *self {
            DelayCoupling::SinOfSum { amp } => amp * v.iter().sum::<f64>().sin(),
            _ => v.iter().map(|&x| self.term(x)).sum(),
        }
    }

    fn gradient(&self, v: &[f64], out: &mut [f64]) -> bool {
        match *self {
            DelayCoupling::SinOfSum { amp } => {
                let c = amp * v.iter().sum::<f64>().cos();
                out.iter_mut().for_each(|o| *o = c);
            }
            _ => {
                for (o, &x) in out.iter_mut().zip(v) {
                    *o = self.term_derivative(x);
                }
            }
        }
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DelayFn {
    Constant(f64),
    /// `mean + amp·sin(omega·t)`
    Sinusoid { mean: f64, amp: f64, omega: f64 },
}

impl DelayFn {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            DelayFn::Constant(c) => c,
            DelayFn::Sinusoid { mean, amp, omega } => mean + amp * (omega * t).sin(),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            DelayFn::Constant(_) => 0.0,
            DelayFn::Sinusoid { amp, omega, .. } => amp * omega * (omega * t).cos(),
        }
    }

    fn range(&self) -> (f64, f64) {
        match *self {
            DelayFn::Constant(c) => (c, c),
            DelayFn::Sinusoid { mean, amp, .. } => (mean - amp.abs(), mean + amp.abs()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DelaySpec {
    pub r: f64,
    pub delays: Vec<DelayFn>,
}

impl DelaySpec {
    pub fn new(r: f64, delays: Vec<DelayFn>) -> Result<Self> {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::semantic("r", "0 <= r < ∞ required"));
        }
        for (i, d) in delays.iter().enumerate() {
            let (lo, hi) = d.range();
            if lo < 0.0 || hi > r + 1e-12 {
                return Err(Error::semantic(
                    format!("r{}", i + 1),
                    format!("delay must stay in [0, r] = [0, {r}], has range [{lo}, {hi}]"),
                ));
            }
        }
        Ok(Self { r, delays })
    }

    pub fn m(&self) -> usize {
        self.delays.len()
    }

    pub fn is_c1(&self) -> bool {
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Forcing {
    Zero,
    /// `amp·sin(jπx/L)·cos(omega·t)`
    Mode { j: usize, amp: f64, omega: f64 },
    Constant { value: f64 },
}

impl Forcing {
    pub fn eval(&self, x: f64, t: f64, length: f64) -> f64 {
        match *self {
            Forcing::Zero => 0.0,
            Forcing::Mode { j, amp, omega } => {
                amp * (j as f64 * PI * x / length).sin() * (omega * t).cos()
            }
            Forcing::Constant { value } => value,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Forcing::Zero)
    }

    /// `||h||_{L^∞(ℝ×Ω)}`, exact for the built-in kinds.
    pub fn sup_norm(&self) -> f64 {
        match *self {
            Forcing::Zero => 0.0,
            Forcing::Mode { amp, .. } => amp.abs(),
            Forcing::Constant { value } => value.abs(),
        }
    }

    /// `||h||_{L^∞(ℝ;H¹)}` with `||h||²_{H¹} = |h|² + |∇h|²`.
    pub fn h1_norm(&self, length: f64) -> f64 {
        match *self {
            Forcing::Zero => 0.0,
            Forcing::Mode { j, amp, .. } => {
                let k = j as f64 * PI / length;
                amp.abs() * (length / 2.0 * (1.0 + k * k)).sqrt()
            }
            Forcing::Constant { value } => value.abs() * length.sqrt(),
        }
    }
}

/// Full problem definition on `Ω = (0, L)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub length: f64,
    pub f: Reaction,
    pub g: DelayCoupling,
    pub separated: bool,
    pub delays: DelaySpec,
    pub h: Forcing,
    /// Declared `||h||_{L^∞(ℝ×Ω)}`.
    pub h_linf: Option<f64>,
    /// Declared `||h||_{L^∞(ℝ;H¹)}`.
    pub h_h1: Option<f64>,
    pub constants: StructureConstants,
}

/// Optional user overrides for the derived growth constants.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConstantOverrides {
    pub a1: Option<f64>,
    pub b0: Option<f64>,
    pub b0p: Option<f64>,
    pub b1p: Option<f64>,
}

/// Dissipation and growth constants as declared by the user.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeclaredConstants {
    pub lambda_diss: f64,
    pub n_diss: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub a0: f64,
    pub beta: f64,
}

impl ProblemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        length: f64,
        f: Reaction,
        g: DelayCoupling,
        separated: bool,
        delays: DelaySpec,
        h: Forcing,
        h_linf: Option<f64>,
        h_h1: Option<f64>,
        declared: DeclaredConstants,
        overrides: ConstantOverrides,
    ) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::semantic("length", "L > 0 required"));
        }
        critical_exponents(declared.gamma, declared.beta, declared.alpha)?;
        if separated && !g.is_separable() {
            return Err(Error::semantic("separated", "coupling is not of separated form"));
        }
        if !matches!(g, DelayCoupling::Zero) && delays.m() == 0 {
            return Err(Error::semantic("delays", "a nonzero coupling needs at least one delay"));
        }
        let m = delays.m();
        let a1 = overrides.a1.unwrap_or(2.0 * declared.a0 + f.value(0.0).abs());
        let (b0p, b1p) = match (overrides.b0p, overrides.b1p) {
            (Some(a), Some(b)) => (a, b),
            (a, b) => {
                let (ea, eb) = match g.analytic_bounds(m, declared.beta) {
                    Some(x) => x,
                    None => {
                        let rep = check_g(&g, m.max(1), declared.beta, None, 10.0)?;
                        (rep.b0p, rep.b1p)
                    }
                };
                (a.unwrap_or(ea), b.unwrap_or(eb))
            }
        };
        let constants = StructureConstants {
            lambda_diss: declared.lambda_diss,
            n_diss: declared.n_diss,
            gamma: declared.gamma,
            alpha: declared.alpha,
            a0: declared.a0,
            a1,
            beta: declared.beta,
            // ||v||_* <= |v| turns the max-norm bounds into euclidean ones
            b0: overrides.b0.unwrap_or(b0p),
            b1: b1p,
            b0p,
            b1p,
        };
        constants.validate()?;
        let h_linf = match (h_linf, h) {
            (Some(v), _) => Some(v),
            (None, Forcing::Zero) => Some(0.0),
            (None, _) => None,
        };
        let h_h1 = match (h_h1, h) {
            (Some(v), _) => Some(v),
            (None, Forcing::Zero) => Some(0.0),
            (None, _) => None,
        };
        let spec = Self { length, f, g, separated, delays, h, h_linf, h_h1, constants };
        spec.check_forcing_bounds()?;
        Ok(spec)
    }

    pub fn m(&self) -> usize {
        self.delays.m()
    }

    pub fn r(&self) -> f64 {
        self.delays.r
    }

    pub fn omega_measure(&self) -> f64 {
        self.length
    }

    pub fn exponents(&self) -> CriticalExponents {
        let c = &self.constants;
        critical_exponents(c.gamma, c.beta, c.alpha).expect("validated at construction")
    }

    fn check_forcing_bounds(&self) -> Result<()> {
        // sampled maxima over a space-time lattice must not exceed the declared bounds
        let mut sup: f64 = 0.0;
        for it in 0..64 {
            let t = it as f64 * 0.37;
            for ix in 0..=256 {
                let x = self.length * ix as f64 / 256.0;
                sup = sup.max(self.h.eval(x, t, self.length).abs());
            }
        }
        if let Some(b) = self.h_linf {
            if b < sup * (1.0 - 1e-12) {
                return Err(Error::semantic(
                    "linf_bound",
                    format!("declared ||h||_∞ = {b} is below the sampled maximum {sup}"),
                ));
            }
        }
        if let Some(b) = self.h_h1 {
            let exact = self.h.h1_norm(self.length);
            if b < exact * (1.0 - 1e-12) {
                return Err(Error::semantic(
                    "h1_bound",
                    format!("declared ||h||_H1 = {b} is below the computed value {exact}"),
                ));
            }
        }
        Ok(())
    }

    /// `||h||_{L^∞(ℝ;L^{q_γ/γ})}^{q_γ/γ} <= |Ω|·||h||_∞^{q_γ/γ}`.
    pub fn h_lp_pow(&self, q: f64) -> Result<f64> {
        let p = CriticalExponents::q_gamma(self.constants.gamma, q) / self.constants.gamma;
        let sup = self
            .h_linf
            .ok_or_else(|| Error::IncompleteSpec("missing ||h||_∞ bound".into()))?;
        Ok(if sup == 0.0 { 0.0 } else { self.length * sup.powf(p) })
    }

    pub fn delayed_times(&self, t: f64, out: &mut [f64]) {
        for (o, d) in out.iter_mut().zip(&self.delays.delays) {
            *o = t - d.eval(t);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FReport {
    pub f0_ok: bool,
    pub f1_ok: bool,
    /// Minimum of `-Λ|s|^{γ+1} + N - f(s)s` over the samples.
    pub f0_margin: f64,
    /// Minimum of `a₀(|s|^{α-1} + 1) - |f'(s)|` over the samples.
    pub f1_margin: f64,
    /// Minimum of `a₁(|s|^α + 1) - |f(s)|` over the samples.
    pub a1_margin: f64,
    pub samples: usize,
}

impl FReport {
    pub fn worst_margin(&self) -> f64 {
        self.f0_margin.min(self.f1_margin).min(self.a1_margin)
    }
}

fn central_difference(f: &dyn ScalarFn, s: f64) -> f64 {
    let h = 1e-6 * s.abs().max(1.0);
    (f.value(s + h) - f.value(s - h)) / (2.0 * h)
}

/// Samples `(F0)`, `(F1)` and the growth bound `|f(s)| <= a₁(|s|^α + 1)` on
/// `n` uniform points of `[-range, range]`.
pub fn check_f(f: &dyn ScalarFn, c: &StructureConstants, range: f64, n: usize) -> Result<FReport> {
    if n < 1000 {
        return Err(Error::Domain(format!("at least 1000 samples required, got {n}")));
    }
    let mut rep = FReport {
        f0_ok: true,
        f1_ok: true,
        f0_margin: f64::INFINITY,
        f1_margin: f64::INFINITY,
        a1_margin: f64::INFINITY,
        samples: n,
    };
    for i in 0..n {
        let s = -range + 2.0 * range * i as f64 / (n - 1) as f64;
        let fs = f.value(s);
        let rhs0 = -c.lambda_diss * s.abs().powf(c.gamma + 1.0) + c.n_diss;
        let m0 = rhs0 - fs * s;
        let d = f.derivative(s).unwrap_or_else(|| central_difference(f, s));
        let m1 = c.a0 * (s.abs().powf(c.alpha - 1.0) + 1.0) - d.abs();
        let ma = c.a1 * (s.abs().powf(c.alpha) + 1.0) - fs.abs();
        let tol = 1e-9 * (1.0 + rhs0.abs().max(fs.abs() * s.abs()));
        if m0 < -tol {
            return Err(Error::StructureViolation {
                condition: "F0",
                sample: format!("s = {s}"),
                detail: format!("f(s)s = {} > -Λ|s|^(γ+1) + N = {rhs0}", fs * s),
            });
        }
        if m1 < -1e-9 * (1.0 + d.abs()) {
            return Err(Error::StructureViolation {
                condition: "F1",
                sample: format!("s = {s}"),
                detail: format!("|f'(s)| = {} exceeds the growth bound", d.abs()),
            });
        }
        if ma < -1e-9 * (1.0 + fs.abs()) {
            return Err(Error::StructureViolation {
                condition: "growth bound on f",
                sample: format!("s = {s}"),
                detail: format!("|f(s)| = {} > a₁(|s|^α + 1) with a₁ = {}", fs.abs(), c.a1),
            });
        }
        rep.f0_margin = rep.f0_margin.min(m0);
        rep.f1_margin = rep.f1_margin.min(m1);
        rep.a1_margin = rep.a1_margin.min(ma);
    }
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GReport {
    pub g1_ok: bool,
    /// Smallest euclidean `b₀` over the samples (not inflated).
    pub b0_min: f64,
    /// Effective max-norm constants, inflated by 10% and floored.
    pub b0p: f64,
    pub b1p: f64,
    pub samples: usize,
}

/// Samples `g` over `[-range, range]^m`: a full lattice for `m <= 4`, otherwise
/// `10⁵` seeded random draws.
pub fn check_g(g: &dyn VectorFn, m: usize, beta: f64, b0: Option<f64>, range: f64) -> Result<GReport> {
    if m == 0 {
        return Err(Error::Domain("coupling needs at least one argument".into()));
    }
    let mut v = vec![0.0; m];
    let mut grad = vec![0.0; m];
    let mut worst_b0 = 0.0f64;
    let mut worst_b0p = 0.0f64;
    let mut worst_b1p = 0.0f64;
    let mut samples = 0usize;
    let mut visit = |v: &[f64]| -> Result<()> {
        if !g.gradient(v, &mut grad) {
            let mut w = v.to_vec();
            for k in 0..m {
                let h = 1e-6 * v[k].abs().max(1.0);
                w[k] = v[k] + h;
                let up = g.value(&w);
                w[k] = v[k] - h;
                let dn = g.value(&w);
                w[k] = v[k];
                grad[k] = (up - dn) / (2.0 * h);
            }
        }
        let gnorm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
        let eu = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mx = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let gv = g.value(v).abs();
        let need_b0 = gnorm / (eu.powf(beta - 1.0) + 1.0);
        if let Some(b) = b0 {
            if need_b0 > b * (1.0 + 1e-9) {
                return Err(Error::StructureViolation {
                    condition: "G1",
                    sample: format!("v = {v:?}"),
                    detail: format!("|∇g(v)| = {gnorm} > b₀(|v|^(β-1) + 1) with b₀ = {b}"),
                });
            }
        }
        worst_b0 = worst_b0.max(need_b0);
        worst_b0p = worst_b0p.max(gnorm / (mx.powf(beta - 1.0) + 1.0));
        worst_b1p = worst_b1p.max(gv / (mx.powf(beta) + 1.0));
        samples += 1;
        Ok(())
    };
    if m <= 4 {
        let per_dim = ((1e5f64).powf(1.0 / m as f64).floor() as usize) | 1;
        let total = per_dim.pow(m as u32);
        for idx in 0..total {
            let mut rem = idx;
            for x in v.iter_mut() {
                let k = rem % per_dim;
                rem /= per_dim;
                *x = -range + 2.0 * range * k as f64 / (per_dim - 1) as f64;
            }
            visit(&v)?;
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..100_000 {
            for x in v.iter_mut() {
                *x = rng.gen_range(-range..=range);
            }
            visit(&v)?;
        }
    }
    Ok(GReport {
        g1_ok: true,
        b0_min: worst_b0,
        b0p: (EMPIRICAL_INFLATION * worst_b0p).max(DELAY_CONSTANT_FLOOR),
        b1p: (EMPIRICAL_INFLATION * worst_b1p).max(DELAY_CONSTANT_FLOOR),
        samples,
    })
}

/// Initial datum `φ` on `[-r, 0]`, stored as spectral projections on a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryFunction {
    times: Vec<f64>,
    fields: Vec<SpectralField>,
}

impl HistoryFunction {
    pub fn new(times: Vec<f64>, fields: Vec<SpectralField>) -> Result<Self> {
        if times.is_empty() || times.len() != fields.len() {
            return Err(Error::semantic("history", "need one field per history time"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::semantic("history", "history times must be strictly increasing"));
        }
        if (times[times.len() - 1]).abs() > 1e-12 {
            return Err(Error::semantic("history", "history grid must end at t = 0"));
        }
        let n = fields[0].n_modes();
        if fields.iter().any(|f| f.n_modes() != n) {
            return Err(Error::semantic("history", "all history fields need the same size"));
        }
        Ok(Self { times, fields })
    }

    /// Uniform history grid on `[-r, 0]` with `n_times` nodes (one node if `r = 0`).
    pub fn uniform_times(r: f64, n_times: usize) -> Vec<f64> {
        if r == 0.0 || n_times < 2 {
            return vec![0.0];
        }
        (0..n_times)
            .map(|i| -r + r * i as f64 / (n_times - 1) as f64)
            .map(|t| if t.abs() < 1e-15 { 0.0 } else { t })
            .collect()
    }

    /// Projects `φ(s, x)` sampled on the interior grid; the Dirichlet values
    /// `φ(s, 0)`, `φ(s, L)` must vanish.
    pub fn from_fn(times: Vec<f64>, grid: &Grid, phi: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let nodes = grid.nodes();
        let mut fields = Vec::with_capacity(times.len());
        for &s in &times {
            let ends = phi(s, 0.0).abs().max(phi(s, grid.length()).abs());
            if ends > 1e-10 {
                return Err(Error::semantic(
                    "history",
                    format!("φ({s}) violates the Dirichlet condition (boundary value {ends})"),
                ));
            }
            let vals: Vec<f64> = nodes.iter().map(|&x| phi(s, x)).collect();
            fields.push(grid.analyze(&vals)?);
        }
        Self::new(times, fields)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn fields(&self) -> &[SpectralField] {
        &self.fields
    }

    pub fn r(&self) -> f64 {
        -self.times[0]
    }

    pub fn n_modes(&self) -> usize {
        self.fields[0].n_modes()
    }

    fn stencil(&self, t: f64) -> (usize, usize) {
        let n = self.times.len();
        let deg = 3.min(n - 1);
        // interval index i with times[i] <= t <= times[i+1]
        let i = match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(n.saturating_sub(2)),
            Err(i) => i.saturating_sub(1).min(n.saturating_sub(2)),
        };
        let lo = if deg == 3 { i.saturating_sub(1).min(n - 4) } else { 0 };
        (lo, deg)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let lo = self.times[0];
        if !(t >= lo - 1e-12 && t <= 1e-12) {
            return Err(Error::Domain(format!("history queried at {t}, outside [{lo}, 0]")));
        }
        Ok(())
    }

    /// Value (`deriv = false`) or time derivative of the piecewise-cubic interpolant.
    fn eval_into(&self, t: f64, deriv: bool, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        if self.times.len() == 1 {
            if !deriv {
                let c = self.fields[0].coeffs();
                for (o, v) in out.iter_mut().zip(c) {
                    *o = *v;
                }
            }
            return;
        }
        let (lo, deg) = self.stencil(t);
        let pts = &self.times[lo..=lo + deg];
        for (a, &ta) in pts.iter().enumerate() {
            let w = if deriv {
                let mut s = 0.0;
                for (b, &tb) in pts.iter().enumerate() {
                    if b == a {
                        continue;
                    }
                    let mut p = 1.0 / (ta - tb);
                    for (c, &tc) in pts.iter().enumerate() {
                        if c != a && c != b {
                            p *= (t - tc) / (ta - tc);
                        }
                    }
                    s += p;
                }
                s
            } else {
                pts.iter()
                    .enumerate()
                    .filter(|(b, _)| *b != a)
                    .map(|(_, &tb)| (t - tb) / (ta - tb))
                    .product()
            };
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.fields[lo + a].coeffs()) {
                *o += w * v;
            }
        }
    }

    pub(crate) fn sample_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        self.check_time(t)?;
        let n = self.n_modes();
        if out.len() == n {
            self.eval_into(t, false, out);
        } else {
            let mut tmp = vec![0.0; n];
            self.eval_into(t, false, &mut tmp);
            let k = n.min(out.len());
            out.iter_mut().for_each(|o| *o = 0.0);
            out[..k].copy_from_slice(&tmp[..k]);
        }
        Ok(())
    }

    pub fn derivative(&self, t: f64, n_modes: usize) -> Result<SpectralField> {
        self.check_time(t)?;
        let mut tmp = vec![0.0; self.n_modes()];
        self.eval_into(t, true, &mut tmp);
        tmp.resize(n_modes, 0.0);
        SpectralField::from_coeffs(tmp)
    }
}

/// `φ(t)` projected onto the first `n_modes` basis functions.
pub fn sample_history(phi: &HistoryFunction, t: f64, n_modes: usize) -> Result<SpectralField> {
    let mut out = vec![0.0; n_modes];
    phi.sample_into(t, &mut out)?;
    SpectralField::from_coeffs(out)
}

/// Declarative history: a finite sum of modes times a time profile.
#[derive(Clone, Debug, PartialEq)]
pub struct HistorySpec {
    pub modes: Vec<(usize, f64)>,
    pub profile: TimeProfile,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeProfile {
    Constant,
    /// amplitude factor `1 + slope·s`
    Affine { slope: f64 },
}

impl HistorySpec {
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            modes: self.modes.iter().map(|&(j, a)| (j, a * factor)).collect(),
            profile: self.profile,
        }
    }

    pub fn build(&self, r: f64, n_modes: usize) -> Result<HistoryFunction> {
        let n_times = if r == 0.0 { 1 } else { 33 };
        let times = HistoryFunction::uniform_times(r, n_times);
        let fields = times
            .iter()
            .map(|&s| {
                let factor = match self.profile {
                    TimeProfile::Constant => 1.0,
                    TimeProfile::Affine { slope } => 1.0 + slope * s,
                };
                let mut f = SpectralField::zeros(n_modes);
                for &(j, a) in &self.modes {
                    if j >= 1 && j <= n_modes {
                        f.coeffs_mut()[j - 1] += a * factor;
                    }
                }
                f
            })
            .collect();
        HistoryFunction::new(times, fields)
    }
}
