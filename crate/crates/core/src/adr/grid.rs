//! Periodic grid on `[0, 2 pi)^2`, two-dimensional FFTs and the spectral
//! operators shared by every solve.
//!
//! Fourier convention: `theta_hat(k) = n^{-2} sum_x theta(x) exp(-i k.x)`,
//! so `theta(x) = sum_k theta_hat(k) exp(i k.x)` and `cos(x)` has
//! coefficient `1/2` at `k = (1, 0)`. Arrays are stored row-major with the
//! `x` index fastest: entry `j * n + i` holds `(kx, ky) = (freq(i), freq(j))`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Spectral = Vec<Complex64>;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Grid resolution, diffusivity, nominal time step and horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    pub n: usize,
    pub kappa: f64,
    pub dt: f64,
    pub t_star: f64,
}

impl TorusGrid {
    pub fn new(n: usize, kappa: f64, dt: f64, t_star: f64) -> Result<Self> {
        let g = Self { n, kappa, dt, t_star };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 16 || !self.n.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("grid size must be even and at least 16, got {}", self.n)));
        }
        for (name, v) in [("kappa", self.kappa), ("dt", self.dt), ("t_star", self.t_star)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Number of steps; the actual step is `t_star / steps() <= dt`.
    pub fn steps(&self) -> usize {
        ((self.t_star / self.dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
    }

    pub fn step_dt(&self) -> f64 {
        self.t_star / self.steps() as f64
    }

    /// Step index of time `t`, which must lie on the step lattice.
    pub fn step_of_time(&self, t: f64) -> Result<usize> {
        let h = self.step_dt();
        let k = (t / h).round();
        if !(t >= 0.0) || k > self.steps() as f64 || (k * h - t).abs() > 1e-9 * self.t_star.max(1.0) {
            return Err(Error::MissingSnapshot(t));
        }
        Ok(k as usize)
    }

    pub fn freq(&self, i: usize) -> i64 {
        let n = self.n as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Array index of wavevector `(kx, ky)`, if it is on the grid.
    pub fn index(&self, kx: i64, ky: i64) -> Option<usize> {
        let n = self.n as i64;
        let h = n / 2;
        if kx < -h || kx >= h || ky < -h || ky >= h {
            return None;
        }
        Some((ky.rem_euclid(n) * n + kx.rem_euclid(n)) as usize)
    }

    /// Two-thirds rule: keep `3 |kx| < n` and `3 |ky| < n`.
    pub fn resolved(&self, kx: i64, ky: i64) -> bool {
        let n = self.n as i64;
        3 * kx.abs() < n && 3 * ky.abs() < n
    }

    /// Grid point `(x_i, y_j)`.
    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        let h = 2.0 * std::f64::consts::PI / self.n as f64;
        (i as f64 * h, j as f64 * h)
    }
}

/// Precomputed FFT plans and wavenumber tables for one grid.
#[derive(Clone)]
pub struct SpectralOps {
    pub grid: TorusGrid,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Derivative multipliers, zero at the Nyquist frequency.
    pub kx: Vec<f64>,
    pub ky: Vec<f64>,
    pub k2: Vec<f64>,
    pub mask: Vec<bool>,
}

impl std::fmt::Debug for SpectralOps {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralOps").field("grid", &self.grid).finish()
    }
}

impl SpectralOps {
    pub fn new(grid: TorusGrid) -> Result<Self> {
        grid.validate()?;
        let n = grid.n;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let nyq = (n / 2) as i64;
        let deriv = |k: i64| if k.abs() == nyq { 0.0 } else { k as f64 };
        let mut kx = vec![0.0; n * n];
        let mut ky = vec![0.0; n * n];
        let mut k2 = vec![0.0; n * n];
        let mut mask = vec![false; n * n];
        for j in 0..n {
            for i in 0..n {
                let (a, b) = (grid.freq(i), grid.freq(j));
                let idx = j * n + i;
                kx[idx] = deriv(a);
                ky[idx] = deriv(b);
                k2[idx] = (a * a + b * b) as f64;
                mask[idx] = grid.resolved(a, b);
            }
        }
        Ok(Self { grid, fwd, inv, kx, ky, k2, mask })
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn len(&self) -> usize {
        self.grid.n * self.grid.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn zeros(&self) -> Spectral {
        vec![ZERO; self.len()]
    }

    fn transpose(&self, a: &mut [Complex64]) {
        let n = self.n();
        for j in 0..n {
            for i in j + 1..n {
                a.swap(j * n + i, i * n + j);
            }
        }
    }

    fn fft2(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        plan.process(buf);
        self.transpose(buf);
        plan.process(buf);
        self.transpose(buf);
    }

    /// Physical values to normalised Fourier coefficients.
    pub fn forward(&self, phys: &[f64]) -> Spectral {
        let mut buf: Spectral = phys.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft2(&mut buf, &self.fwd);
        let s = 1.0 / self.len() as f64;
        buf.iter_mut().for_each(|z| *z *= s);
        buf
    }

    /// Fourier coefficients to physical values (real part).
    pub fn inverse(&self, spec: &[Complex64]) -> Vec<f64> {
        let mut buf = spec.to_vec();
        self.fft2(&mut buf, &self.inv);
        buf.iter().map(|z| z.re).collect()
    }

    pub fn apply_mask(&self, a: &mut [Complex64]) {
        for (z, &m) in a.iter_mut().zip(&self.mask) {
            if !m {
                *z = ZERO;
            }
        }
    }

    /// Physical `(d/dx f, d/dy f)`.
    pub fn gradient(&self, f: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        let i = Complex64::new(0.0, 1.0);
        let dx: Spectral = f.iter().zip(&self.kx).map(|(z, k)| i * k * z).collect();
        let dy: Spectral = f.iter().zip(&self.ky).map(|(z, k)| i * k * z).collect();
        (self.inverse(&dx), self.inverse(&dy))
    }

    /// Multiplies by `exp(-kappa |k|^2 tau)`.
    pub fn decay(&self, a: &mut [Complex64], tau: f64) {
        if tau == 0.0 {
            return;
        }
        let c = -self.grid.kappa * tau;
        for (z, k2) in a.iter_mut().zip(&self.k2) {
            *z *= (c * k2).exp();
        }
    }

    /// Masked transform of the physical field `-(u a + v b)`.
    pub fn neg_dot(&self, u: &[f64], v: &[f64], a: &[f64], b: &[f64]) -> Spectral {
        let p: Vec<f64> = (0..self.len()).map(|x| -(u[x] * a[x] + v[x] * b[x])).collect();
        let mut s = self.forward(&p);
        self.apply_mask(&mut s);
        s
    }

    /// `-P(w . grad f)` for a physical velocity `w`.
    pub fn advect(&self, w: &VelocityGrid, f: &[Complex64]) -> Spectral {
        let (fx, fy) = self.gradient(f);
        self.neg_dot(&w.u, &w.v, &fx, &fy)
    }

    /// `|f|_{L^2}^2 = (2 pi)^2 sum |f_hat|^2`.
    pub fn l2_sq(&self, f: &[Complex64]) -> f64 {
        4.0 * std::f64::consts::PI.powi(2) * f.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    /// `|grad f|_{L^2}^2`.
    pub fn h1_sq(&self, f: &[Complex64]) -> f64 {
        4.0 * std::f64::consts::PI.powi(2) * f.iter().zip(&self.k2).map(|(z, k)| k * z.norm_sqr()).sum::<f64>()
    }

    /// Largest `|f_hat(k) - conj f_hat(-k)|`.
    pub fn hermitian_defect(&self, f: &[Complex64]) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for i in 0..n {
                let a = f[j * n + i];
                let b = f[((n - j) % n) * n + (n - i) % n];
                worst = worst.max((a - b.conj()).norm());
            }
        }
        worst
    }

    /// `(f(k) + conj f(-k)) / 2`.
    pub fn hermitian_part(&self, f: &[Complex64]) -> Spectral {
        let n = self.n();
        let mut out = self.zeros();
        for j in 0..n {
            for i in 0..n {
                let b = f[((n - j) % n) * n + (n - i) % n];
                out[j * n + i] = 0.5 * (f[j * n + i] + b.conj());
            }
        }
        out
    }
}

/// Real inner product `sum Re(conj(a) b)`, equal to `n^{-2} sum_x a b` for
/// real fields.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

pub fn axpy(y: &mut [Complex64], a: f64, x: &[Complex64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// A velocity field sampled on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityGrid {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl VelocityGrid {
    pub fn zeros(len: usize) -> Self {
        Self { u: vec![0.0; len], v: vec![0.0; len] }
    }

    /// Velocity `(d/dy psi, -d/dx psi)` of a stream function.
    pub fn from_stream(ops: &SpectralOps, stream: &[Complex64]) -> Self {
        let (px, py) = ops.gradient(stream);
        Self { u: py, v: px.into_iter().map(|x| -x).collect() }
    }

    pub fn uniform(len: usize, u: f64, v: f64) -> Self {
        Self { u: vec![u; len], v: vec![v; len] }
    }

    pub fn max_speed(&self) -> f64 {
        self.u.iter().zip(&self.v).map(|(a, b)| a.abs().max(b.abs())).fold(0.0, f64::max)
    }

    /// Largest stable step for the advective CFL condition with safety 1/2.
    pub fn cfl_limit(&self, grid: &TorusGrid) -> f64 {
        let dx = 2.0 * std::f64::consts::PI / grid.n as f64;
        let s = self.max_speed();
        if s == 0.0 {
            f64::INFINITY
        } else {
            0.5 * dx / s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_has_half_coefficient() {
        let ops = SpectralOps::new(TorusGrid::new(16, 0.1, 0.01, 1.0).unwrap()).unwrap();
        let n = 16;
        let mut phys = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                phys[j * n + i] = ops.grid.point(i, j).0.cos();
            }
        }
        let s = ops.forward(&phys);
        let idx = ops.grid.index(1, 0).unwrap();
        assert!((s[idx] - Complex64::new(0.5, 0.0)).norm() < 1e-14);
        assert!((s[ops.grid.index(-1, 0).unwrap()] - Complex64::new(0.5, 0.0)).norm() < 1e-14);
        let back = ops.inverse(&s);
        assert!(back.iter().zip(&phys).all(|(a, b)| (a - b).abs() < 1e-14));
        assert!(ops.hermitian_defect(&s) < 1e-15);
    }

    #[test]
    fn derivative_of_sine() {
        let ops = SpectralOps::new(TorusGrid::new(16, 0.1, 0.01, 1.0).unwrap()).unwrap();
        let n = 16;
        let phys: Vec<f64> = (0..n * n)
            .map(|x| {
                let (a, b) = ops.grid.point(x % n, x / n);
                (2.0 * b).sin() + a.cos()
            })
            .collect();
        let (dx, dy) = ops.gradient(&ops.forward(&phys));
        for x in 0..n * n {
            let (a, b) = ops.grid.point(x % n, x / n);
            assert!((dx[x] + a.sin()).abs() < 1e-13);
            assert!((dy[x] - 2.0 * (2.0 * b).cos()).abs() < 1e-13);
        }
    }

    #[test]
    fn steps_and_times() {
        let g = TorusGrid::new(16, 0.1, 0.03, 0.3).unwrap();
        assert_eq!(g.steps(), 10);
        assert_eq!(g.step_of_time(0.15).unwrap(), 5);
        assert!(matches!(g.step_of_time(0.155), Err(Error::MissingSnapshot(_))));
        assert!(TorusGrid::new(15, 0.1, 0.1, 1.0).is_err());
    }
}
