//! Retarded integral inequalities
//!
//! A nonnegative continuous `y` on `[-r, ∞)` is a member of the solution set of
//!
//! ```text
//! y(t) <= E(t,τ)·||y_τ|| + ∫_τ^t K(t,s)·||y_s|| ds + ρ,    t >= τ >= 0
//! ```
//!
//! where `||y_s||` is the sup of `y` over `[s - r, s]`. For exponential `E` the
//! members obey the decay envelope `M·||y_0||·e^{-λt} + η·ρ` and, whenever the
//! kernel mass is below one, the uniform bound `(c + 1)(||y_0|| + 1) + μ·ρ`.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// `E(t, s) = m0 · exp(-lam0 · (t - s))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExponentialKernel {
    pub m0: f64,
    pub lam0: f64,
}

impl ExponentialKernel {
    pub fn new(m0: f64, lam0: f64) -> Result<Self> {
        if !(m0 > 0.0 && m0.is_finite()) {
            return Err(Error::InvalidKernel(format!("prefactor must be positive, got {m0}")));
        }
        if !(lam0 > 0.0 && lam0.is_finite()) {
            return Err(Error::InvalidKernel(format!("decay rate must be positive, got {lam0}")));
        }
        Ok(Self { m0, lam0 })
    }

    pub fn eval(&self, t: f64, s: f64) -> f64 {
        self.m0 * (-self.lam0 * (t - s)).exp()
    }

    /// `sup_{t >= s} E(t, s)`.
    pub fn sup(&self) -> f64 {
        self.m0
    }
}

/// Delay kernel `K(t, s) = weight · exp(-rate · (t - s))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DelayKernelWeight {
    pub weight: f64,
    pub rate: f64,
}

impl DelayKernelWeight {
    pub fn new(weight: f64, rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidKernel(format!("kernel rate must be positive, got {rate}")));
        }
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::InvalidKernel(format!(
                "kernel weight must be nonnegative, got {weight}"
            )));
        }
        Ok(Self { weight, rate })
    }

    pub fn eval(&self, t: f64, s: f64) -> f64 {
        self.weight * (-self.rate * (t - s)).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Horizon {
    Bounded(f64),
    Unbounded,
}

/// `κ = sup_{0 <= t <= horizon} ∫_0^t K(t,s) ds`.
pub fn kernel_mass(k: &DelayKernelWeight, horizon: Horizon) -> Result<f64> {
    if !(k.rate > 0.0) {
        return Err(Error::InvalidKernel(format!("kernel rate must be positive, got {}", k.rate)));
    }
    let ratio = k.weight / k.rate;
    match horizon {
        Horizon::Unbounded => Ok(ratio),
        Horizon::Bounded(t) => {
            if t < 0.0 {
                return Err(Error::Domain(format!("negative horizon {t}")));
            }
            // (1 - e^{-rate t}) is increasing, so the sup sits at the endpoint.
            Ok(ratio * (-(-k.rate * t).exp_m1()))
        }
    }
}

/// Constants of the decay envelope and the uniform bound.
///
/// `eta`, `m_big`, `lambda` and `m1_log` are only meaningful when `decay` is set,
/// i.e. when `kappa < 1/(1 + vartheta)`; otherwise they are NaN.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InequalityConstants {
    pub kappa: f64,
    pub vartheta: f64,
    pub mu: f64,
    pub c: f64,
    pub eta: f64,
    pub m_big: f64,
    pub lambda: f64,
    pub r: f64,
    pub m1_log: f64,
    pub decay: bool,
}

impl InequalityConstants {
    /// Only `mu` and `c`, for use with [`uniform_bound`]. Requires `kappa < 1`.
    pub fn uniform(kappa: f64, vartheta: f64) -> Result<Self> {
        if !(kappa >= 0.0) {
            return Err(Error::InvalidKernel(format!("kernel mass must be nonnegative, got {kappa}")));
        }
        if kappa >= 1.0 {
            return Err(Error::InapplicableInequality(format!("kappa = {kappa} >= 1")));
        }
        let mu = 1.0 / (1.0 - kappa);
        let c = (vartheta / (1.0 - kappa)).max(1.0);
        Ok(Self {
            kappa,
            vartheta,
            mu,
            c,
            eta: f64::NAN,
            m_big: f64::NAN,
            lambda: f64::NAN,
            r: f64::NAN,
            m1_log: f64::NAN,
            decay: false,
        })
    }

    /// `ξ` with `λ = ξ·λ₀` for the undelayed case.
    pub fn xi(&self) -> f64 {
        ((2.0f64).ln() - (1.0 + self.kappa * self.c).ln()) / (2.0 * self.m1_log)
    }
}

pub fn decay_constants(
    kappa: f64,
    vartheta: f64,
    e: &ExponentialKernel,
    r: f64,
) -> Result<InequalityConstants> {
    if !(r >= 0.0) {
        return Err(Error::Domain(format!("delay horizon must be nonnegative, got {r}")));
    }
    if !(kappa >= 0.0) {
        return Err(Error::InvalidKernel(format!("kernel mass must be nonnegative, got {kappa}")));
    }
    if kappa >= 1.0 / (1.0 + vartheta) {
        return Err(Error::InapplicableInequality(format!(
            "kappa = {kappa} >= 1/(1 + vartheta) = {}",
            1.0 / (1.0 + vartheta)
        )));
    }
    let mut k = InequalityConstants::uniform(kappa, vartheta)?;
    let kc = kappa * k.c;
    k.eta = (k.mu + 1.0) / (1.0 - kc);
    k.m_big = k.c * (2.0 / (1.0 + kc)).sqrt();
    // a kernel with M₀ < 1 is dominated by the one with M₀ = 1, which keeps M₁ > 0
    let m0 = e.m0.max(1.0);
    k.m1_log = (m0 * k.eta).ln().max((2.0 * m0 / (1.0 - kc)).ln());
    k.lambda = ((2.0f64).ln() - (1.0 + kc).ln()) / (2.0 * (k.m1_log + r * e.lam0)) * e.lam0;
    k.r = r;
    k.decay = true;
    Ok(k)
}

/// `M·||y_0||·e^{-λt} + η·ρ`.
pub fn decay_envelope(t: f64, y0_norm: f64, rho: f64, k: &InequalityConstants) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("envelope time must be nonnegative, got {t}")));
    }
    if y0_norm < 0.0 || rho < 0.0 {
        return Err(Error::Domain("envelope data must be nonnegative".into()));
    }
    if !k.decay {
        return Err(Error::InapplicableInequality("decay branch was not constructed".into()));
    }
    Ok(k.m_big * y0_norm * (-k.lambda * t).exp() + k.eta * rho)
}

/// `(c + 1)(||y_0|| + 1) + μ·ρ`.
pub fn uniform_bound(y0_norm: f64, rho: f64, k: &InequalityConstants) -> Result<f64> {
    if k.kappa >= 1.0 {
        return Err(Error::InapplicableInequality(format!("kappa = {} >= 1", k.kappa)));
    }
    Ok((k.c + 1.0) * (y0_norm + 1.0) + k.mu * rho)
}

/// Nonnegative samples on the uniform grid `t_i = -r + i·dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledSeries {
    r: f64,
    dt: f64,
    values: Vec<f64>,
    lead: usize,
}

impl SampledSeries {
    pub fn new(r: f64, dt: f64, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) || !(r >= 0.0) {
            return Err(Error::InvalidSeries(format!("need dt > 0 and r >= 0, got dt={dt}, r={r}")));
        }
        let lead_f = r / dt;
        let lead = lead_f.round() as usize;
        if (lead_f - lead as f64).abs() > 1e-9 * lead_f.max(1.0) {
            return Err(Error::InvalidSeries(format!("r = {r} is not a multiple of dt = {dt}")));
        }
        if values.len() <= lead {
            return Err(Error::InvalidSeries("series does not reach t = 0".into()));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::InvalidSeries(format!("entry {i} is {v}, expected a nonnegative value")));
        }
        Ok(Self { r, dt, values, lead })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Index of the sample at `t = 0`.
    pub fn zero_index(&self) -> usize {
        self.lead
    }

    pub fn time(&self, i: usize) -> f64 {
        (i as f64 - self.lead as f64) * self.dt
    }

    /// `||y_{t_i}||`: sliding maximum over the trailing window of width `r`.
    pub fn window_sup(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len());
        let mut dq: VecDeque<usize> = VecDeque::new();
        for (i, &v) in self.values.iter().enumerate() {
            while dq.back().is_some_and(|&j| self.values[j] <= v) {
                dq.pop_back();
            }
            dq.push_back(i);
            while dq.front().is_some_and(|&j| j + self.lead < i) {
                dq.pop_front();
            }
            out.push(self.values[dq[0]]);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MembershipReport {
    pub member: bool,
    /// Minimum over `t >= 0` of `RHS(t) - y(t)`.
    pub worst_slack: f64,
    pub worst_time: f64,
    pub tolerance: f64,
    /// First sampled time after which `y < μρ + ε` for the rest of the series.
    pub eventually_below: Option<f64>,
    /// Right-hand side at every sample `t >= 0`.
    pub rhs: Vec<f64>,
}

/// First sampled `t >= 0` from which every remaining sample lies strictly below `threshold`.
pub fn eventually_below(series: &SampledSeries, threshold: f64) -> Option<f64> {
    let v = series.values();
    let z = series.zero_index();
    let mut entry = None;
    for i in (z..v.len()).rev() {
        if v[i] < threshold {
            entry = Some(i);
        } else {
            break;
        }
    }
    entry.map(|i| series.time(i))
}

/// Discrete check of the inequality with `τ = 0`, using composite trapezoid
/// quadrature on the sample grid.
pub fn verify_membership(
    series: &SampledSeries,
    e: &ExponentialKernel,
    k: &DelayKernelWeight,
    rho: f64,
    quad_step: f64,
    epsilon: f64,
) -> Result<MembershipReport> {
    if !(rho >= 0.0) {
        return Err(Error::Domain(format!("rho must be nonnegative, got {rho}")));
    }
    if quad_step < series.dt() * (1.0 - 1e-12) {
        return Err(Error::InvalidSeries(format!(
            "series spacing {} is coarser than quad_step {quad_step}",
            series.dt()
        )));
    }
    let dt = series.dt();
    let v = series.values();
    let z = series.zero_index();
    let sup = series.window_sup();
    let y0_norm = sup[z];
    let sup_y = v.iter().cloned().fold(0.0, f64::max);
    let tolerance = 10.0 * quad_step * quad_step * k.weight * sup_y;

    let decay = (-k.rate * dt).exp();
    let mut acc = 0.0;
    let mut rhs = Vec::with_capacity(v.len() - z);
    let mut worst_slack = f64::INFINITY;
    let mut worst_time = 0.0;
    for n in 0..(v.len() - z) {
        let t = n as f64 * dt;
        acc = acc * decay + sup[z + n];
        let integral = if n == 0 {
            0.0
        } else {
            k.weight * dt * (acc - 0.5 * (-k.rate * t).exp() * sup[z] - 0.5 * sup[z + n])
        };
        let bound = e.eval(t, 0.0) * y0_norm + integral + rho;
        let slack = bound - v[z + n];
        if slack < worst_slack {
            worst_slack = slack;
            worst_time = t;
        }
        rhs.push(bound);
    }

    let eventually = match kernel_mass(k, Horizon::Unbounded) {
        Ok(kappa) if kappa < 1.0 => eventually_below(series, rho / (1.0 - kappa) + epsilon),
        _ => None,
    };

    Ok(MembershipReport {
        member: worst_slack >= -tolerance,
        worst_slack,
        worst_time,
        tolerance,
        eventually_below: eventually,
        rhs,
    })
}
