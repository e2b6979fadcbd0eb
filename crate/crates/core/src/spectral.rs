//! Dirichlet sine basis on `(0, L)`.
//!
//! Fields are stored as coefficients of `w_j(x) = sin(jπx/L)`, `j = 1..=k`.
//! Physical values live on the uniform interior grid `x_i = i·h`,
//! `h = L/(n_quad + 1)`, where the discrete sine sums are exactly orthogonal:
//! `Σ_i sin(jπi/(n+1)) sin(lπi/(n+1)) = (n+1)/2 · δ_jl` for `1 <= j, l <= n`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// `μ_j = (jπ/L)²`.
pub fn eigenvalue(j: usize, length: f64) -> Result<f64> {
    if j < 1 {
        return Err(Error::Domain("mode index must be >= 1".into()));
    }
    let w = j as f64 * PI / length;
    Ok(w * w)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(n_modes: usize) -> Self {
        Self { coeffs: vec![0.0; n_modes] }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Result<Self> {
        if let Some((j, c)) = coeffs.iter().enumerate().find(|(_, c)| !c.is_finite()) {
            return Err(Error::Domain(format!("coefficient {} is not finite: {c}", j + 1)));
        }
        Ok(Self { coeffs })
    }

    /// `amp · w_mode` in a basis of `n_modes` functions.
    pub fn mode(n_modes: usize, mode: usize, amp: f64) -> Self {
        let mut f = Self::zeros(n_modes);
        if mode >= 1 && mode <= n_modes {
            f.coeffs[mode - 1] = amp;
        }
        f
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.len()
    }

    /// Truncates or zero-pads to `n_modes` coefficients.
    pub fn resized(&self, n_modes: usize) -> Self {
        let mut c = self.coeffs.clone();
        c.resize(n_modes, 0.0);
        Self { coeffs: c }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }
}

/// Spectral truncation plus quadrature grid, with cached sine/cosine tables.
#[derive(Clone, Debug)]
pub struct Grid {
    length: f64,
    n_modes: usize,
    n_quad: usize,
    // sin(jπx_i/L), row-major by mode
    sines: Vec<f64>,
    // cos(jπx_i/L) on the closed grid i = 0..=n_quad+1
    cosines: Vec<f64>,
    eigen: Vec<f64>,
}

impl Grid {
    /// Grid with the dealiasing padding `n_quad >= 4·n_modes`.
    pub fn new(length: f64, n_modes: usize, n_quad: usize) -> Result<Self> {
        if n_quad < 4 * n_modes {
            return Err(Error::semantic(
                "n_quad",
                format!("n_quad >= 4·n_modes required ({n_quad} < {})", 4 * n_modes),
            ));
        }
        Self::with_min_padding(length, n_modes, n_quad)
    }

    /// Grid without the padding rule; only `n_quad >= n_modes` is needed for
    /// the transforms to be invertible.
    pub fn with_min_padding(length: f64, n_modes: usize, n_quad: usize) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::semantic("length", "L > 0 required"));
        }
        if n_modes < 1 {
            return Err(Error::semantic("n_modes", "at least one mode required"));
        }
        if n_quad < n_modes {
            return Err(Error::semantic("n_quad", "n_quad >= n_modes required"));
        }
        let np1 = (n_quad + 1) as f64;
        let mut sines = Vec::with_capacity(n_modes * n_quad);
        let mut cosines = Vec::with_capacity(n_modes * (n_quad + 2));
        for j in 1..=n_modes {
            for i in 1..=n_quad {
                sines.push(sin_index(j * i, n_quad + 1));
            }
            for i in 0..=(n_quad + 1) {
                cosines.push((PI * (j * i) as f64 / np1).cos());
            }
        }
        let eigen = (1..=n_modes).map(|j| eigenvalue(j, length).unwrap()).collect();
        Ok(Self { length, n_modes, n_quad, sines, cosines, eigen })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_quad(&self) -> usize {
        self.n_quad
    }

    /// Node spacing `h = L/(n_quad + 1)`.
    pub fn spacing(&self) -> f64 {
        self.length / (self.n_quad + 1) as f64
    }

    /// Interior nodes `x_1..x_n`.
    pub fn nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        (1..=self.n_quad).map(|i| i as f64 * h).collect()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigen
    }

    fn check(&self, f: &SpectralField) -> Result<()> {
        if f.n_modes() != self.n_modes {
            return Err(Error::Dimension { expected: self.n_modes, got: f.n_modes() });
        }
        Ok(())
    }

    pub fn synthesize(&self, f: &SpectralField) -> Result<Vec<f64>> {
        self.check(f)?;
        let mut out = vec![0.0; self.n_quad];
        self.synthesize_into(f.coeffs(), &mut out);
        Ok(out)
    }

    pub(crate) fn synthesize_into(&self, coeffs: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (j, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let row = &self.sines[j * self.n_quad..(j + 1) * self.n_quad];
            for (o, s) in out.iter_mut().zip(row) {
                *o += c * s;
            }
        }
    }

    pub fn analyze(&self, values: &[f64]) -> Result<SpectralField> {
        if values.len() != self.n_quad {
            return Err(Error::Dimension { expected: self.n_quad, got: values.len() });
        }
        let mut c = vec![0.0; self.n_modes];
        self.analyze_into(values, &mut c);
        Ok(SpectralField { coeffs: c })
    }

    pub(crate) fn analyze_into(&self, values: &[f64], out: &mut [f64]) {
        let scale = 2.0 / (self.n_quad + 1) as f64;
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.sines[j * self.n_quad..(j + 1) * self.n_quad];
            let s: f64 = row.iter().zip(values).map(|(a, b)| a * b).sum();
            *o = scale * s;
        }
    }

    /// `∂_x u` on the closed grid `x_0 = 0, …, x_{n+1} = L`.
    pub fn synthesize_gradient(&self, f: &SpectralField) -> Result<Vec<f64>> {
        self.check(f)?;
        let n = self.n_quad + 2;
        let mut out = vec![0.0; n];
        for (j, &c) in f.coeffs().iter().enumerate() {
            let k = (j + 1) as f64 * PI / self.length;
            let row = &self.cosines[j * n..(j + 1) * n];
            for (o, cs) in out.iter_mut().zip(row) {
                *o += c * k * cs;
            }
        }
        Ok(out)
    }

    /// `|u|_q`, trapezoid on the closed grid (the endpoint terms vanish).
    pub fn lq_norm(&self, f: &SpectralField, q: f64) -> Result<f64> {
        Ok(self.lq_norm_pow(f, q)?.powf(1.0 / q))
    }

    /// `|u|_q^q`.
    pub fn lq_norm_pow(&self, f: &SpectralField, q: f64) -> Result<f64> {
        if !(q >= 1.0) {
            return Err(Error::Domain(format!("L^q norm needs q >= 1, got {q}")));
        }
        let v = self.synthesize(f)?;
        Ok(lq_pow_values(&v, self.spacing(), q))
    }

    /// `|∇u|`, exact from the coefficients.
    pub fn h1_norm(&self, f: &SpectralField) -> Result<f64> {
        self.check(f)?;
        let s: f64 = f.coeffs().iter().zip(&self.eigen).map(|(c, m)| m * c * c).sum();
        Ok((s * self.length / 2.0).sqrt())
    }

    /// `|Δu|`, exact from the coefficients.
    pub fn h2_norm(&self, f: &SpectralField) -> Result<f64> {
        self.check(f)?;
        let s: f64 = f.coeffs().iter().zip(&self.eigen).map(|(c, m)| m * m * c * c).sum();
        Ok((s * self.length / 2.0).sqrt())
    }

    /// `|u|_2` via Parseval.
    pub fn l2_norm(&self, f: &SpectralField) -> Result<f64> {
        self.check(f)?;
        Ok(l2_from_coeffs(f.coeffs(), self.length))
    }

    /// Grid maximum of `|u|`; a lower bound of the true sup.
    pub fn linf_norm(&self, f: &SpectralField) -> Result<f64> {
        let v = self.synthesize(f)?;
        Ok(v.iter().fold(0.0, |m, x| m.max(x.abs())))
    }

    /// `∫ |u|^{q-2} |∇u|² dx` by trapezoid on the closed grid.
    pub fn mixed_integral(&self, f: &SpectralField, q: f64) -> Result<f64> {
        if !(q >= 2.0) {
            return Err(Error::Domain(format!("mixed integral needs q >= 2, got {q}")));
        }
        let interior = self.synthesize(f)?;
        let grad = self.synthesize_gradient(f)?;
        let h = self.spacing();
        let n = self.n_quad;
        let p = q - 2.0;
        let mut s = 0.0;
        for (i, g) in grad.iter().enumerate() {
            let u = if i == 0 || i == n + 1 { 0.0 } else { interior[i - 1] };
            let w = if i == 0 || i == n + 1 { 0.5 } else { 1.0 };
            // 0^0 = 1 keeps the q = 2 case equal to |∇u|²
            s += w * u.abs().powf(p) * g * g;
        }
        Ok(s * h)
    }
}

pub(crate) fn l2_from_coeffs(c: &[f64], length: f64) -> f64 {
    (c.iter().map(|x| x * x).sum::<f64>() * length / 2.0).sqrt()
}

pub(crate) fn lq_pow_values(values: &[f64], h: f64, q: f64) -> f64 {
    if q == 2.0 {
        return h * values.iter().map(|v| v * v).sum::<f64>();
    }
    h * values.iter().map(|v| v.abs().powf(q)).sum::<f64>()
}

// sin(π·p/n) with the argument reduced mod 2n for accuracy at large p.
fn sin_index(p: usize, n: usize) -> f64 {
    let red = p % (2 * n);
    (PI * red as f64 / n as f64).sin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pi_grid(n_modes: usize) -> Grid {
        Grid::new(PI, n_modes, 4 * n_modes).unwrap()
    }

    #[test]
    fn eigenvalue_examples() {
        assert_relative_eq!(eigenvalue(1, PI).unwrap(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(eigenvalue(3, PI).unwrap(), 9.0, max_relative = 1e-15);
        assert_relative_eq!(eigenvalue(1, 1.0).unwrap(), PI * PI, max_relative = 1e-15);
        assert!(eigenvalue(0, 1.0).is_err());
    }

    #[test]
    fn grid_padding_rule() {
        assert!(Grid::new(1.0, 8, 31).is_err());
        assert!(Grid::new(1.0, 8, 32).is_ok());
        assert!(Grid::with_min_padding(1.0, 8, 8).is_ok());
        assert!(Grid::new(-1.0, 8, 32).is_err());
    }

    #[test]
    fn single_mode_round_trip() {
        let g = pi_grid(8);
        let f = SpectralField::mode(8, 2, 1.0);
        let v = g.synthesize(&f).unwrap();
        for (x, val) in g.nodes().iter().zip(&v) {
            assert!((val - (2.0 * x).sin()).abs() < 1e-14);
        }
        let back = g.analyze(&v).unwrap();
        for (a, b) in back.coeffs().iter().zip(f.coeffs()) {
            assert!((a - b).abs() < 1e-14);
        }
        let z = g.synthesize(&SpectralField::zeros(8)).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn size_mismatch() {
        let g = pi_grid(8);
        assert!(matches!(g.synthesize(&SpectralField::zeros(4)), Err(Error::Dimension { .. })));
        assert!(matches!(g.analyze(&[0.0; 3]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn lq_norm_examples() {
        let g = pi_grid(16);
        let s = SpectralField::mode(16, 1, 1.0);
        assert_relative_eq!(g.lq_norm(&s, 2.0).unwrap(), (PI / 2.0).sqrt(), max_relative = 1e-13);
        assert_relative_eq!(
            g.lq_norm(&s, 4.0).unwrap(),
            (3.0 * PI / 8.0).powf(0.25),
            max_relative = 1e-13
        );
        assert_eq!(g.lq_norm(&SpectralField::zeros(16), 3.0).unwrap(), 0.0);
        assert!(g.lq_norm(&s, 0.5).is_err());
    }

    #[test]
    fn sobolev_norm_examples() {
        let g = pi_grid(8);
        let s1 = SpectralField::mode(8, 1, 1.0);
        let s2 = SpectralField::mode(8, 2, 1.0);
        let base = (PI / 2.0).sqrt();
        assert_relative_eq!(g.h1_norm(&s1).unwrap(), base, max_relative = 1e-14);
        assert_relative_eq!(g.h2_norm(&s1).unwrap(), base, max_relative = 1e-14);
        assert_relative_eq!(g.h1_norm(&s2).unwrap(), 2.0 * base, max_relative = 1e-14);
        assert_relative_eq!(g.h2_norm(&s2).unwrap(), 4.0 * base, max_relative = 1e-14);
    }

    #[test]
    fn linf_and_mixed_examples() {
        let g = Grid::new(PI, 32, 128).unwrap();
        let s = SpectralField::mode(32, 1, 1.0);
        assert!((g.linf_norm(&s).unwrap() - 1.0).abs() < 1e-3);
        assert_eq!(g.mixed_integral(&SpectralField::zeros(32), 6.0).unwrap(), 0.0);
        assert_relative_eq!(g.mixed_integral(&s, 2.0).unwrap(), PI / 2.0, max_relative = 1e-13);
        assert!(g.mixed_integral(&s, 1.5).is_err());
    }

    fn random_field(seed: u64, n: usize) -> SpectralField {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        SpectralField::from_coeffs((0..n).map(|j| rng.gen_range(-1.0..1.0) / (1 + j) as f64).collect())
            .unwrap()
    }

    #[test]
    fn random_round_trip_against_direct_sum() {
        let g = Grid::new(2.3, 8, 40).unwrap();
        let f = random_field(3, 8);
        // oracle: evaluate the sine series pointwise, then project by direct summation
        let nodes = g.nodes();
        let direct: Vec<f64> = nodes
            .iter()
            .map(|x| {
                f.coeffs()
                    .iter()
                    .enumerate()
                    .map(|(j, c)| c * ((j + 1) as f64 * PI * x / 2.3).sin())
                    .sum()
            })
            .collect();
        let v = g.synthesize(&f).unwrap();
        for (a, b) in v.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-13);
        }
        let back = g.analyze(&direct).unwrap();
        for (a, b) in back.coeffs().iter().zip(f.coeffs()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-3));
        }
    }

    #[test]
    fn h1_h2_against_finite_differences() {
        let length = 1.7;
        let n = 12;
        let g = Grid::new(length, n, 4 * n).unwrap();
        let f = random_field(11, n);
        // oracle: 10x finer closed grid, central differences of the pointwise series
        let fine = 10 * 4 * n;
        let hf = length / fine as f64;
        let eval = |x: f64| -> f64 {
            f.coeffs()
                .iter()
                .enumerate()
                .map(|(j, c)| c * ((j + 1) as f64 * PI * x / length).sin())
                .sum()
        };
        let vals: Vec<f64> = (0..=fine).map(|i| eval(i as f64 * hf)).collect();
        // gradient on cell midpoints, midpoint rule
        let grad_sq: f64 = (0..fine).map(|i| ((vals[i + 1] - vals[i]) / hf).powi(2) * hf).sum();
        // second differences, extend by odd reflection at the Dirichlet ends
        let mut lap_sq = 0.0;
        for i in 0..=fine {
            let left = if i == 0 { -vals[1] } else { vals[i - 1] };
            let right = if i == fine { -vals[fine - 1] } else { vals[i + 1] };
            let d2 = (left - 2.0 * vals[i] + right) / (hf * hf);
            let w = if i == 0 || i == fine { 0.5 } else { 1.0 };
            lap_sq += w * d2 * d2 * hf;
        }
        let h1 = g.h1_norm(&f).unwrap();
        let h2 = g.h2_norm(&f).unwrap();
        assert!((grad_sq.sqrt() - h1).abs() / h1 < 1e-3);
        assert!((lap_sq.sqrt() - h2).abs() / h2 < 1e-2);
        // two Richardson levels on the gradient norm tighten the oracle to the stated level
        let grad_sq_at = |stride: usize| -> f64 {
            let hs = stride as f64 * hf;
            (0..fine / stride)
                .map(|i| ((vals[stride * (i + 1)] - vals[stride * i]) / hs).powi(2) * hs)
                .sum()
        };
        let (e1, e2, e4) = (grad_sq, grad_sq_at(2), grad_sq_at(4));
        let r1 = (4.0 * e1 - e2) / 3.0;
        let r2 = (4.0 * e2 - e4) / 3.0;
        let rich = (16.0 * r1 - r2) / 15.0;
        assert!((rich.sqrt() - h1).abs() < 1e-8 * h1.max(1.0));
    }

    proptest! {
        #[test]
        fn parseval_poincare_truncation(seed in 0u64..10_000, n in 2usize..20) {
            let length = 0.5 + (seed % 7) as f64;
            let g = Grid::new(length, n, 4 * n).unwrap();
            let f = random_field(seed, n);
            let l2sq = g.lq_norm_pow(&f, 2.0).unwrap();
            let pars: f64 = f.coeffs().iter().map(|c| c * c).sum::<f64>() * length / 2.0;
            prop_assert!((l2sq - pars).abs() <= 1e-10 * pars.max(1e-300));
            let h1 = g.h1_norm(&f).unwrap();
            prop_assert!(h1 * h1 >= g.eigenvalues()[0] * pars * (1.0 - 1e-12));

            let mut t = f.clone();
            t.coeffs_mut()[n - 1] = 0.0;
            prop_assert!(g.h1_norm(&t).unwrap() <= h1);
            prop_assert!(g.h2_norm(&t).unwrap() <= g.h2_norm(&f).unwrap());
        }
    }
}
