//! Ergodic averages, asymptotic-variance estimators, the Lipschitz
//! criterion for observables and the resulting observable error bound.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::lyapunov::LyapunovKind;
use crate::spectrum::{CovarianceSpectrum, Field};

/// A real function of the state, optionally with its gradient.
pub trait Observable: Send + Sync {
    fn eval(&self, q: &Field) -> f64;

    fn grad(&self, _q: &Field) -> Option<Field> {
        None
    }

    /// A Lipschitz constant known in closed form, if any.
    fn declared_lipschitz(&self) -> Option<f64> {
        None
    }
}

/// `Phi(q) = c`.
#[derive(Clone, Copy, Debug)]
pub struct Constant(pub f64);

impl Observable for Constant {
    fn eval(&self, _q: &Field) -> f64 {
        self.0
    }
    fn grad(&self, q: &Field) -> Option<Field> {
        Some(Field::zeros(q.dim()))
    }
}

/// `Phi(q) = scale * <q, e_i>`.
#[derive(Clone, Copy, Debug)]
pub struct Coordinate {
    pub index: usize,
    pub scale: f64,
}

impl Coordinate {
    pub fn new(index: usize) -> Self {
        Self { index, scale: 1.0 }
    }
}

impl Observable for Coordinate {
    fn eval(&self, q: &Field) -> f64 {
        self.scale * q.coeffs()[self.index]
    }
    fn grad(&self, q: &Field) -> Option<Field> {
        Some(Field::basis(q.dim(), self.index).scaled(self.scale))
    }
}

/// `Phi(q) = <q, e_i>^2`.
#[derive(Clone, Copy, Debug)]
pub struct CoordinateSquared(pub usize);

impl Observable for CoordinateSquared {
    fn eval(&self, q: &Field) -> f64 {
        q.coeffs()[self.0].powi(2)
    }
    fn grad(&self, q: &Field) -> Option<Field> {
        Some(Field::basis(q.dim(), self.0).scaled(2.0 * q.coeffs()[self.0]))
    }
}

/// Largest relative discrepancy between `<grad, e_i>` and central
/// differences of step `h`.
pub fn gradient_check(obs: &dyn Observable, q: &Field, h: f64) -> Result<f64> {
    let g = obs.grad(q).ok_or(Error::MissingGradient)?;
    let scale = g.norm().max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for i in 0..q.dim() {
        let e = Field::basis(q.dim(), i);
        let fd = (obs.eval(&q.add(&e.scaled(h))) - obs.eval(&q.sub(&e.scaled(h)))) / (2.0 * h);
        worst = worst.max((fd - g.coeffs()[i]).abs() / scale);
    }
    Ok(worst)
}

/// Prefix means of a scalar series.
pub fn running_mean(xs: &[f64]) -> Vec<f64> {
    let mut s = 0.0;
    xs.iter()
        .enumerate()
        .map(|(k, x)| {
            s += x;
            s / (k + 1) as f64
        })
        .collect()
}

/// Prefix means of `Phi` along a trajectory.
pub fn ergodic_average(states: &[Field], obs: &dyn Observable) -> Result<Vec<f64>> {
    if states.is_empty() {
        return Err(Error::EmptySample);
    }
    let xs: Vec<f64> = states.iter().map(|q| obs.eval(q)).collect();
    Ok(running_mean(&xs))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CltMethod {
    BatchMeans,
    AutocovSum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltEstimate {
    pub method: CltMethod,
    pub sigma2_hat: f64,
    pub stderr: f64,
    pub mean: f64,
    /// Batch count, or the last lag included in the autocovariance sum.
    pub window: usize,
}

/// Biased empirical autocovariances `gamma_k`, `k = 0..max_lag`, computed
/// through one zero-padded FFT.
pub fn autocovariance(xs: &[f64], max_lag: usize) -> Vec<f64> {
    let n = xs.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let len = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex64> = xs.iter().map(|x| Complex64::new(x - mean, 0.0)).collect();
    buf.resize(len, Complex64::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex64::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let scale = 1.0 / (len as f64 * n as f64);
    buf.iter().take(max_lag.min(n - 1) + 1).map(|z| z.re * scale).collect()
}

/// Estimates `sigma^2` in `sqrt(n) (mean_n - mu(Phi)) -> N(0, sigma^2)`.
pub fn clt_sigma(xs: &[f64], method: CltMethod) -> Result<CltEstimate> {
    let n = xs.len();
    let batches = (n as f64).sqrt().floor() as usize;
    if n < 100 * batches || batches < 2 {
        return Err(Error::TrajectoryTooShort { len: n, needed: 10_000 });
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    match method {
        CltMethod::BatchMeans => {
            let size = n / batches;
            let means: Vec<f64> =
                xs.chunks_exact(size).take(batches).map(|c| c.iter().sum::<f64>() / size as f64).collect();
            let m = means.iter().sum::<f64>() / batches as f64;
            let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
            let s2 = var * size as f64;
            Ok(CltEstimate {
                method,
                sigma2_hat: s2,
                stderr: s2 * (2.0 / (batches - 1) as f64).sqrt(),
                mean,
                window: batches,
            })
        }
        CltMethod::AutocovSum => {
            let gam = autocovariance(xs, n - 1);
            // Initial positive sequence: pair sums gamma_{2k} + gamma_{2k+1}
            // until the first non-positive one.
            let mut s2 = -gam[0];
            let mut last = 0;
            let mut k = 0;
            while 2 * k + 1 < gam.len() {
                let pair = gam[2 * k] + gam[2 * k + 1];
                if pair <= 0.0 {
                    break;
                }
                s2 += 2.0 * pair;
                last = 2 * k + 1;
                k += 1;
            }
            let s2 = s2.max(0.0);
            Ok(CltEstimate {
                method,
                sigma2_hat: s2,
                stderr: s2 * (2.0 * (2 * last + 1) as f64 / n as f64).sqrt(),
                mean,
                window: last,
            })
        }
    }
}

/// Integrated autocorrelation time `sigma^2 / Var(Phi)`.
pub fn integrated_autocorrelation(xs: &[f64]) -> Result<f64> {
    let est = clt_sigma(xs, CltMethod::AutocovSum)?;
    let g0 = autocovariance(xs, 0)[0];
    if !(g0 > 0.0) {
        return Ok(1.0);
    }
    Ok(est.sigma2_hat / g0)
}

/// Empirical lower bound on the Lipschitz constant of `Phi` with respect
/// to the distance-like function, from a finite probe set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub l_phi_hat: f64,
    pub probes: usize,
    pub argmax: usize,
}

pub fn lipschitz_bound(
    spec: &CovarianceSpectrum,
    obs: &dyn Observable,
    v: LyapunovKind,
    epsilon: f64,
    probes: &[Field],
) -> Result<LipschitzEstimate> {
    if probes.is_empty() {
        return Err(Error::EmptySample);
    }
    let g = spec.gamma();
    let mut best = (0.0, 0);
    for (i, q) in probes.iter().enumerate() {
        let d = obs.grad(q).ok_or(Error::MissingGradient)?;
        let num = (2.0 * obs.eval(q).abs()).max(epsilon.sqrt() * spec.dual_norm(g, &d)?);
        let r = num / (1.0 + v.eval(spec, q)?).sqrt();
        if r > best.0 {
            best = (r, i);
        }
    }
    Ok(LipschitzEstimate { l_phi_hat: best.0, probes: probes.len(), argmax: best.1 })
}

/// `L_Phi C1 exp(-n C2) mu_moment`.
pub fn observable_error_bound(l_phi: f64, c1: f64, c2: f64, n: u64, mu_moment: f64) -> f64 {
    if l_phi == 0.0 {
        return 0.0;
    }
    l_phi * c1 * (-(n as f64) * c2).exp() * mu_moment
}

/// Monte Carlo estimate of `int sqrt(1 + V(q0) + V(q')) mu(dq')` from
/// stationary samples.
pub fn mu_moment(spec: &CovarianceSpectrum, v: LyapunovKind, q0: &Field, samples: &[Field]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let v0 = v.eval(spec, q0)?;
    let mut s = 0.0;
    for q in samples {
        s += (1.0 + v0 + v.eval(spec, q)?).sqrt();
    }
    Ok(s / samples.len() as f64)
}

/// One-sample Kolmogorov-Smirnov test against `N(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Asymptotic Kolmogorov tail `P(K > x)`.
fn kolmogorov_tail(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

pub fn ks_test_normal(xs: &[f64]) -> Result<KsResult> {
    if xs.is_empty() {
        return Err(Error::EmptySample);
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = normal.cdf(*x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    Ok(KsResult { statistic: d, p_value: kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d) })
}

/// AR(1) asymptotic variance of the mean of `x <- c x + s xi`.
pub fn ar1_sigma2(c: f64, s2: f64) -> f64 {
    let stationary = s2 / (1.0 - c * c);
    stationary * (1.0 + c) / (1.0 - c)
}
