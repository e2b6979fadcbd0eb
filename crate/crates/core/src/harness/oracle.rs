//! Independent finite-difference solver: second-order central differences in
//! space, Crank–Nicolson diffusion with a Heun predictor–corrector for the
//! remaining terms, cubic Lagrange interpolation of delayed states.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{sample_history, HistoryFunction, ProblemSpec, ScalarFn, VectorFn};

pub struct FdSolution {
    pub dt: f64,
    pub l2: Vec<f64>,
    pub nodes: usize,
}

// Solves (I - k·D) x = rhs for the Dirichlet second-difference D.
fn thomas(diag: f64, off: f64, rhs: &mut [f64], scratch: &mut [f64]) {
    let n = rhs.len();
    scratch[0] = off / diag;
    rhs[0] /= diag;
    for i in 1..n {
        let m = diag - off * scratch[i - 1];
        scratch[i] = off / m;
        rhs[i] = (rhs[i] - off * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

struct Fd<'a> {
    p: &'a ProblemSpec,
    phi: &'a HistoryFunction,
    x: Vec<f64>,
    h: f64,
    dt: f64,
    states: Vec<Vec<f64>>,
}

impl Fd<'_> {
    fn history_values(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let c = sample_history(self.phi, t, self.phi.n_modes())?;
        let l = self.p.length;
        for (o, &x) in out.iter_mut().zip(&self.x) {
            *o = c
                .coeffs()
                .iter()
                .enumerate()
                .map(|(j, a)| a * ((j + 1) as f64 * PI * x / l).sin())
                .sum();
        }
        Ok(())
    }

    fn delayed(&self, tau: f64, stage: Option<(&[f64], &[f64])>, out: &mut [f64]) -> Result<()> {
        if tau < 0.0 {
            return self.history_values(tau, out);
        }
        let n = self.states.len() - 1;
        let tn = n as f64 * self.dt;
        if tau > tn + 1e-12 * self.dt {
            let (un, us) = stage.ok_or(Error::HistoryUnderflow { t: tau, lo: 0.0, hi: tn })?;
            let s = ((tau - tn) / self.dt).clamp(0.0, 1.0);
            for ((o, a), b) in out.iter_mut().zip(un).zip(us) {
                *o = (1.0 - s) * a + s * b;
            }
            return Ok(());
        }
        let pos = tau / self.dt;
        if n == 0 {
            out.copy_from_slice(&self.states[0]);
            return Ok(());
        }
        let k = (pos.floor() as usize).min(n - 1);
        let lo = if n >= 3 { k.saturating_sub(1).min(n - 3) } else { 0 };
        let hi = (lo + 3).min(n);
        let pts: Vec<usize> = (lo..=hi).collect();
        out.iter_mut().for_each(|o| *o = 0.0);
        for &a in &pts {
            let w: f64 = pts
                .iter()
                .filter(|&&b| b != a)
                .map(|&b| (pos - b as f64) / (a as f64 - b as f64))
                .product();
            for (o, v) in out.iter_mut().zip(&self.states[a]) {
                *o += w * v;
            }
        }
        Ok(())
    }

    fn nonlinear(&self, t: f64, u: &[f64], stage: Option<(&[f64], &[f64])>, out: &mut [f64]) -> Result<()> {
        let m = self.p.m();
        let n = u.len();
        let mut taus = vec![0.0; m];
        self.p.delayed_times(t, &mut taus);
        let mut delayed = vec![vec![0.0; n]; m];
        for (d, &tau) in delayed.iter_mut().zip(&taus) {
            self.delayed(tau, stage, d)?;
        }
        let mut args = vec![0.0; m];
        for i in 0..n {
            let mut v = self.p.f.value(u[i]);
            if m > 0 {
                for k in 0..m {
                    args[k] = delayed[k][i];
                }
                v += self.p.g.value(&args);
            }
            v += self.p.h.eval(self.x[i], t, self.p.length);
            out[i] = v;
        }
        Ok(())
    }
}

fn l2(u: &[f64], h: f64) -> f64 {
    (h * u.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

pub fn solve_fd(p: &ProblemSpec, phi: &HistoryFunction, nodes: usize, dt: f64, t_end: f64) -> Result<FdSolution> {
    let n = nodes;
    let h = p.length / (n + 1) as f64;
    let x: Vec<f64> = (1..=n).map(|i| i as f64 * h).collect();
    let mut fd = Fd { p, phi, x, h, dt, states: Vec::new() };
    let mut u0 = vec![0.0; n];
    fd.history_values(0.0, &mut u0)?;
    fd.states.push(u0);
    let steps = (t_end / dt).round() as usize;
    let k = dt / (2.0 * h * h);
    let (diag, off) = (1.0 + 2.0 * k, -k);
    let mut scratch = vec![0.0; n];
    let mut n_now = vec![0.0; n];
    let mut n_star = vec![0.0; n];
    let mut series = vec![l2(&fd.states[0], h)];
    for s in 0..steps {
        let t = s as f64 * dt;
        let un = fd.states[s].clone();
        fd.nonlinear(t, &un, None, &mut n_now)?;
        let explicit: Vec<f64> = (0..n)
            .map(|i| {
                let left = if i > 0 { un[i - 1] } else { 0.0 };
                let right = if i + 1 < n { un[i + 1] } else { 0.0 };
                un[i] + k * (left - 2.0 * un[i] + right)
            })
            .collect();
        let mut star: Vec<f64> = explicit.iter().zip(&n_now).map(|(e, v)| e + dt * v).collect();
        thomas(diag, off, &mut star, &mut scratch);
        fd.nonlinear(t + dt, &star, Some((&un, &star)), &mut n_star)?;
        let mut next: Vec<f64> = (0..n).map(|i| explicit[i] + 0.5 * dt * (n_now[i] + n_star[i])).collect();
        thomas(diag, off, &mut next, &mut scratch);
        let norm = l2(&next, fd.h);
        if !norm.is_finite() || norm > 1e12 {
            return Err(Error::Domain(format!(
                "finite-difference oracle diverged at t = {} (|u|_2 = {norm}); reduce dt or raise the node count",
                t + dt
            )));
        }
        series.push(norm);
        fd.states.push(next);
    }
    Ok(FdSolution { dt, l2: series, nodes: n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        ConstantOverrides, DeclaredConstants, DelayCoupling, DelaySpec, Forcing, HistorySpec, Reaction, TimeProfile,
    };

    #[test]
    fn thomas_solves_tridiagonal() {
        let n = 7;
        let (d, o) = (3.0, -1.0);
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 1.0).collect();
        let mut rhs: Vec<f64> = (0..n)
            .map(|i| {
                let l = if i > 0 { x[i - 1] } else { 0.0 };
                let r = if i + 1 < n { x[i + 1] } else { 0.0 };
                d * x[i] + o * (l + r)
            })
            .collect();
        let mut s = vec![0.0; n];
        thomas(d, o, &mut rhs, &mut s);
        for (a, b) in rhs.iter().zip(&x) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn heat_matches_closed_form() {
        let decl = DeclaredConstants { lambda_diss: 1.0, n_diss: 1.0, gamma: 3.0, alpha: 3.0, a0: 3.0, beta: 1.0 };
        let p = ProblemSpec::new(
            PI,
            Reaction::Zero,
            DelayCoupling::Zero,
            true,
            DelaySpec::new(0.0, vec![]).unwrap(),
            Forcing::Zero,
            None,
            None,
            decl,
            ConstantOverrides::default(),
        )
        .unwrap();
        let phi = HistorySpec { modes: vec![(1, 1.0)], profile: TimeProfile::Constant }.build(0.0, 4).unwrap();
        let s = solve_fd(&p, &phi, 512, 1e-3, 1.0).unwrap();
        let exact = (-1f64).exp() * (PI / 2.0).sqrt();
        assert!((s.l2.last().unwrap() - exact).abs() < 1e-4);
    }
}
