//! Foster-Lyapunov functions `|q|_g^i` and `exp(eta |q|_g^2)`, their drift
//! constants, and Monte Carlo checks of `P^n V <= kappa_V^n V + K_V`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::kernel::{standard_noise, t_max_basic, ChainState, HmcKernel};
use crate::potential::{DiagonalQuadratic, PotentialModel};
use crate::rng::{stream, tag};
use crate::spectrum::{CovarianceSpectrum, Field};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LyapunovKind {
    /// `|q|_g^i`.
    Poly { i: u32 },
    /// `exp(eta |q|_g^2)`.
    Exp { eta: f64 },
}

/// Largest `|q|_g^2` for which `exp(eta |q|^2)` is still representable.
const EXP_LIMIT: f64 = 709.0;

impl LyapunovKind {
    /// `V(q)` evaluated in the spectrum's own `gamma`-norm.
    pub fn eval(&self, spec: &CovarianceSpectrum, q: &Field) -> Result<f64> {
        let n2 = spec.gamma_norm(spec.gamma(), q)?.powi(2);
        self.eval_sq_norm(n2)
    }

    /// `V` as a function of `|q|_g^2`.
    pub fn eval_sq_norm(&self, n2: f64) -> Result<f64> {
        match *self {
            LyapunovKind::Poly { i } => Ok(n2.powf(i as f64 / 2.0)),
            LyapunovKind::Exp { eta } => {
                if eta * n2 > EXP_LIMIT {
                    return Err(Error::Overflow(n2));
                }
                Ok((eta * n2).exp())
            }
        }
    }

    /// Radius `M_V` of the sublevel set `{V <= level}` in the `gamma`-norm.
    pub fn level_radius(&self, level: f64) -> f64 {
        match *self {
            LyapunovKind::Poly { i } => level.max(0.0).powf(1.0 / i as f64),
            LyapunovKind::Exp { eta } => (level.max(1.0).ln() / eta).sqrt(),
        }
    }
}

/// `v_eval` with the exponent fixed by the spectrum.
pub fn v_eval(spec: &CovarianceSpectrum, kind: LyapunovKind, q: &Field) -> Result<f64> {
    kind.eval(spec, q)
}

/// Drift constants with both the one-step and the uniform-in-`n` additive
/// term: `PV <= kappa_V V + k_one_step` and `P^n V <= kappa_V^n V + k_v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftConstants {
    pub kind: LyapunovKind,
    pub t: f64,
    pub kappa_v: f64,
    pub k_one_step: f64,
    pub k_v: f64,
    /// `M_V`: radius of `{V <= 4 K_V}`.
    pub m_v: f64,
    /// Admissible upper limit for `eta` (exponential kind only).
    pub eta_cap: Option<f64>,
    /// True when a constant was found by numerical search rather than by a
    /// closed formula.
    pub certified_by_search: bool,
}

/// Upper limit for `eta` from the Gaussian moment bound.
pub fn eta_cap(spec: &CovarianceSpectrum, l2: f64, t: f64) -> f64 {
    1.0 / (2.0 * spec.trace_reg() * (32.0 / l2 + 67.0 / 8.0 * t * t))
}

/// Conservative default `eta = 0.9 / [Tr(C^{1-2g}) (64/L2 + 17.75 T^2)]`.
pub fn default_eta(spec: &CovarianceSpectrum, l2: f64, t: f64) -> f64 {
    0.9 / (spec.trace_reg() * (64.0 / l2 + 17.75 * t * t))
}

/// `E exp(a |v|_g^2)` for `v ~ N(0, C)`, or `None` when infinite.
pub fn gaussian_mgf(spec: &CovarianceSpectrum, a: f64) -> Option<f64> {
    let s = 1.0 - 2.0 * spec.gamma();
    let mut log = 0.0;
    for l in spec.eigenvalues() {
        let x = 1.0 - 2.0 * a * l.powf(s);
        if !(x > 0.0) {
            return None;
        }
        log -= 0.5 * x.ln();
    }
    Some(log.exp())
}

/// Options for the search that certifies constants of `|q|^i`, `i != 2`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchOptions {
    pub seed: u64,
    pub directions: usize,
    pub radii: usize,
    pub moment_samples: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { seed: 0x5eed, directions: 8, radii: 12, moment_samples: 4000 }
    }
}

pub fn drift_constants(
    spec: &CovarianceSpectrum,
    pot: &dyn PotentialModel,
    kind: LyapunovKind,
    cfg: &FlowConfig,
    search: &SearchOptions,
) -> Result<DriftConstants> {
    let c = pot.constants().ok_or_else(|| Error::MissingConstants("L0..L3".into()))?;
    let t = cfg.t;
    let bound = t_max_basic(spec, c.l1, c.l2);
    if t > bound {
        return Err(Error::TimeConditionViolated { t, bound });
    }
    let l0r = spec.lambda1_reg() * c.l0;
    let tr = spec.trace_reg();
    match kind {
        LyapunovKind::Poly { i: 2 } => {
            let kappa = (-c.l2 * t * t / 16.0).exp();
            let inner = 67.0 / 8.0 * tr + 5.0 / 3.0 * l0r * l0r * t * t + c.l3;
            let k_v = inner * 48.0 / c.l2;
            Ok(DriftConstants {
                kind,
                t,
                kappa_v: kappa,
                k_one_step: inner * t * t,
                k_v,
                m_v: kind.level_radius(4.0 * k_v),
                eta_cap: None,
                certified_by_search: false,
            })
        }
        LyapunovKind::Exp { eta } => {
            let cap = eta_cap(spec, c.l2, t);
            if !(eta > 0.0) || eta >= cap {
                return Err(Error::EtaTooLarge { eta, cap });
            }
            let x = c.l2 * t * t / 32.0;
            let log_r = 5.0 / 3.0 * eta * l0r * l0r * t.powi(4) + eta * c.l3 * t * t
                - 0.5 * (1.0 - 2.0 * eta * (32.0 / c.l2 + 67.0 / 8.0 * t * t) * tr).ln();
            let k_v = (log_r / x).exp();
            Ok(DriftConstants {
                kind,
                t,
                kappa_v: (-x).exp(),
                k_one_step: k_v * x,
                k_v,
                m_v: kind.level_radius(4.0 * k_v),
                eta_cap: Some(cap),
                certified_by_search: false,
            })
        }
        LyapunovKind::Poly { i } => {
            if i == 0 {
                return Err(Error::InvalidArgument("polynomial degree must be positive".into()));
            }
            let kappa = (-c.l2 * t * t * i as f64 / 65.0).exp();
            let c_tilde = search_c_tilde(spec, pot, i, kappa, cfg, search)?;
            let moment = velocity_moment(spec, i, search.moment_samples, search.seed)?;
            let k_one = c_tilde * (moment + 1.0);
            let k_v = k_one / (1.0 - kappa);
            Ok(DriftConstants {
                kind,
                t,
                kappa_v: kappa,
                k_one_step: k_one,
                k_v,
                m_v: kind.level_radius(4.0 * k_v),
                eta_cap: None,
                certified_by_search: true,
            })
        }
    }
}

/// Smallest `C` with `|q_T|^i <= kappa |q_0|^i + C (|v_0|^i + 1)` over a
/// grid of starting points and velocities along random directions.
fn search_c_tilde(
    spec: &CovarianceSpectrum,
    pot: &dyn PotentialModel,
    i: u32,
    kappa: f64,
    cfg: &FlowConfig,
    opts: &SearchOptions,
) -> Result<f64> {
    let g = spec.gamma();
    let kernel = HmcKernel::new(spec, pot, cfg.clone())?;
    let mut rng = stream(opts.seed, tag::PROBE, 0);
    let unit = |f: Field| -> Result<Field> {
        let n = spec.gamma_norm(g, &f)?;
        Ok(if n > 0.0 { f.scaled(1.0 / n) } else { f })
    };
    let mut dirs = Vec::with_capacity(opts.directions);
    for _ in 0..opts.directions {
        let dq = unit(spec.sample_gaussian(&mut rng))?;
        let dv = unit(spec.sample_gaussian(&mut rng))?;
        dirs.push((dq, dv));
    }
    let radii: Vec<f64> =
        (0..opts.radii).map(|k| 10f64.powf(-2.0 + 5.0 * k as f64 / (opts.radii.max(2) - 1) as f64)).collect();
    let fi = i as f64;
    let mut best: f64 = 0.0;
    for (dq, dv) in &dirs {
        for &rq in std::iter::once(&0.0).chain(&radii) {
            for &rv in std::iter::once(&0.0).chain(&radii) {
                let q0 = dq.scaled(rq);
                let v0 = dv.scaled(rv);
                let (qt, _) = kernel.propagate(&q0, &v0)?;
                let lhs = spec.gamma_norm(g, &qt)?.powf(fi);
                let need = (lhs - kappa * rq.powf(fi)) / (rv.powf(fi) + 1.0);
                best = best.max(need);
            }
        }
    }
    Ok(best)
}

/// Monte Carlo estimate of `E |v|_g^i`, `v ~ N(0, C)`, with a three
/// standard error allowance added.
fn velocity_moment(spec: &CovarianceSpectrum, i: u32, samples: usize, seed: u64) -> Result<f64> {
    if samples < 2 {
        return Err(Error::EmptySample);
    }
    let mut rng = stream(seed, tag::PROBE, 1);
    let xs: Vec<f64> = (0..samples)
        .map(|_| spec.gamma_norm(spec.gamma(), &spec.sample_gaussian(&mut rng)).map(|n| n.powi(i as i32)))
        .collect::<Result<_>>()?;
    let (m, se) = mean_stderr(&xs);
    Ok(m + 3.0 * se)
}

pub(crate) fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Closed-form `P^n V(q0)` for a diagonal quadratic potential, where every
/// coordinate is an AR(1) chain `q <- c q + s xi` with `c = cos(omega T)`
/// and `s^2 = lambda sin^2(omega T) / omega^2`.
pub fn quadratic_pnv(
    spec: &CovarianceSpectrum,
    pot: &DiagonalQuadratic,
    kind: LyapunovKind,
    q0: &Field,
    t: f64,
    n: u32,
) -> Result<f64> {
    let g = spec.gamma();
    let mut mean_sq = Vec::with_capacity(spec.dim());
    let mut vars = Vec::with_capacity(spec.dim());
    for (i, (&l, &b)) in spec.eigenvalues().iter().zip(pot.coefficients()).enumerate() {
        let w = (1.0 + l * b).sqrt();
        let c = (w * t).cos();
        let s2 = l * (w * t).sin().powi(2) / (w * w);
        let cn = c.powi(n as i32);
        let stat = if c.abs() < 1.0 { s2 / (1.0 - c * c) } else { 0.0 };
        let weight = l.powf(-2.0 * g);
        mean_sq.push(weight * (cn * q0.coeffs()[i]).powi(2));
        vars.push(weight * stat * (1.0 - cn * cn));
    }
    match kind {
        LyapunovKind::Poly { i: 2 } => Ok(mean_sq.iter().sum::<f64>() + vars.iter().sum::<f64>()),
        LyapunovKind::Exp { eta } => {
            let mut log = 0.0;
            for (m2, v) in mean_sq.iter().zip(&vars) {
                let d = 1.0 - 2.0 * eta * v;
                if !(d > 0.0) {
                    return Err(Error::Overflow(*v));
                }
                log += -0.5 * d.ln() + eta * m2 / d;
            }
            Ok(log.exp())
        }
        LyapunovKind::Poly { i } => Err(Error::InvalidArgument(format!(
            "closed form only available for i = 2 and the exponential kind, got i = {i}"
        ))),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DriftRow {
    pub start: usize,
    pub n: usize,
    pub theory_bound: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DriftReport {
    pub constants: DriftConstants,
    pub samples: usize,
    pub seed: u64,
    pub rows: Vec<DriftRow>,
}

/// Monte Carlo estimate of `P^n V(q0)` for every start and `n <= n_max`.
/// Fails with `DriftViolated` if any estimate exceeds the bound by more
/// than three standard errors.
#[allow(clippy::too_many_arguments)]
pub fn drift_verify(
    spec: &CovarianceSpectrum,
    pot: &dyn PotentialModel,
    constants: &DriftConstants,
    starts: &[Field],
    cfg: &FlowConfig,
    n_max: usize,
    samples: usize,
    seed: u64,
) -> Result<DriftReport> {
    if samples < 2 {
        return Err(Error::EmptySample);
    }
    let kind = constants.kind;
    let kernel = HmcKernel::new(spec, pot, cfg.clone())?;
    let mut rows = Vec::new();
    for (si, q0) in starts.iter().enumerate() {
        let v0 = kind.eval(spec, q0)?;
        let values: Vec<Vec<f64>> = (0..samples)
            .into_par_iter()
            .map(|r| -> Result<Vec<f64>> {
                let mut rng = stream(seed, tag::LYAPUNOV, (si * samples + r) as u64);
                let mut state = ChainState::new(q0.clone());
                let mut out = Vec::with_capacity(n_max);
                for _ in 0..n_max {
                    state = kernel.step(&state, &mut rng)?.0;
                    out.push(kind.eval(spec, &state.q)?);
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        for n in 1..=n_max {
            let xs: Vec<f64> = values.iter().map(|v| v[n - 1]).collect();
            let (m, se) = mean_stderr(&xs);
            let bound = constants.kappa_v.powi(n as i32) * v0 + constants.k_v;
            if m > bound + 3.0 * se {
                return Err(Error::DriftViolated { n, estimate: m, bound, stderr: se });
            }
            rows.push(DriftRow { start: si, n, theory_bound: bound, estimate: m, stderr: se, margin: bound - m });
        }
    }
    Ok(DriftReport { constants: constants.clone(), samples, seed, rows })
}

/// Monte Carlo `E exp(a |v|_g^2)` with its standard error.
pub fn empirical_mgf(spec: &CovarianceSpectrum, a: f64, samples: usize, seed: u64) -> Result<(f64, f64)> {
    if samples < 2 {
        return Err(Error::EmptySample);
    }
    let mut rng = stream(seed, tag::LYAPUNOV, 1 << 39);
    let g = spec.gamma();
    let xs: Vec<f64> = (0..samples)
        .map(|_| {
            let xi = standard_noise(spec.dim(), &mut rng);
            let v = Field::from_vec_unchecked(
                xi.coeffs().iter().zip(spec.eigenvalues()).map(|(x, l)| x * l.sqrt()).collect(),
            );
            spec.gamma_norm(g, &v).map(|n| (a * n * n).exp())
        })
        .collect::<Result<_>>()?;
    Ok(mean_stderr(&xs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::Gaussian;

    #[test]
    fn evaluation_examples() {
        let spec = CovarianceSpectrum::new(vec![1.0], 0.0).unwrap();
        let z = Field::zeros(1);
        assert_eq!(LyapunovKind::Poly { i: 2 }.eval(&spec, &z).unwrap(), 0.0);
        assert_eq!(LyapunovKind::Exp { eta: 0.1 }.eval(&spec, &z).unwrap(), 1.0);
        let q = Field::new(vec![2.0]).unwrap();
        assert_eq!(LyapunovKind::Poly { i: 2 }.eval(&spec, &q).unwrap(), 4.0);
        let e = LyapunovKind::Exp { eta: 0.1 }.eval(&spec, &q).unwrap();
        assert!((e - 1.4918247).abs() < 1e-7);
        let big = Field::new(vec![1e3]).unwrap();
        assert!(matches!(LyapunovKind::Exp { eta: 1.0 }.eval(&spec, &big), Err(Error::Overflow(_))));
    }

    #[test]
    fn quadratic_constants() {
        let spec = CovarianceSpectrum::new(vec![1.0], 0.0).unwrap();
        let pot = Gaussian::new(1);
        let c =
            drift_constants(&spec, &pot, LyapunovKind::Poly { i: 2 }, &FlowConfig::new(0.2), &SearchOptions::default())
                .unwrap();
        assert!((c.kappa_v - 0.9975031).abs() < 1e-7);
        assert!((c.k_v - 402.0).abs() < 1e-12);
        assert_eq!(c.m_v, 2.0 * 402f64.sqrt());
        let c2 =
            drift_constants(&spec, &pot, LyapunovKind::Poly { i: 2 }, &FlowConfig::new(0.1), &SearchOptions::default())
                .unwrap();
        assert!(c2.kappa_v > c.kappa_v);
    }

    #[test]
    fn eta_limits() {
        let spec = CovarianceSpectrum::new(vec![1.0, 0.25], 0.0).unwrap();
        let pot = Gaussian::new(2);
        let cfg = FlowConfig::new(0.2);
        let cap = eta_cap(&spec, 1.0, 0.2);
        assert!(default_eta(&spec, 1.0, 0.2) < cap);
        let r = drift_constants(&spec, &pot, LyapunovKind::Exp { eta: cap }, &cfg, &SearchOptions::default());
        assert!(matches!(r, Err(Error::EtaTooLarge { .. })));
        assert!(
            drift_constants(&spec, &pot, LyapunovKind::Exp { eta: 0.5 * cap }, &cfg, &SearchOptions::default()).is_ok()
        );
    }

    #[test]
    fn mgf_oracle() {
        let spec = CovarianceSpectrum::new(vec![0.5], 0.0).unwrap();
        // E exp(a v^2), v ~ N(0, 0.5): (1 - a)^(-1/2).
        assert!((gaussian_mgf(&spec, 0.2).unwrap() - 0.8f64.powf(-0.5)).abs() < 1e-15);
        assert!(gaussian_mgf(&spec, 1.0).is_none());
    }

    #[test]
    fn poly_four_constant_found_by_search() {
        let spec = CovarianceSpectrum::power_law(1.0, 2.0, 4, 0.0).unwrap();
        let pot = Gaussian::new(4);
        let c =
            drift_constants(&spec, &pot, LyapunovKind::Poly { i: 4 }, &FlowConfig::new(0.2), &SearchOptions::default())
                .unwrap();
        assert!(c.certified_by_search);
        assert!(c.k_v.is_finite() && c.k_v > 0.0);
    }
}
