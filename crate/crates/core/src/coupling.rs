//! Couplings of two chains through shared velocity noise, the Girsanov KL
//! cost of nudging the second chain, empirical contraction and smallness
//! bounds, and the assembled weak-Harris constants.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::kernel::{n_min_contraction, standard_noise, t_max_basic, ChainState, HmcKernel};
use crate::lyapunov::{drift_constants, mean_stderr, DriftConstants, LyapunovKind, SearchOptions};
use crate::potential::PotentialModel;
use crate::rng::{cursor, stream, tag, SimRng};
use crate::spectrum::{project, CovarianceSpectrum, Field, Part};

/// How the second chain's velocity is shifted on the low modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftVariant {
    /// `T^{-1} Pi_N (q - q~)`: positions agree at time `T` for free motion.
    Linear,
    /// `(cos T / sin T) Pi_N (q - q~)`: positions agree at time `T` for the
    /// harmonic oscillator.
    Pendulum,
    /// No shift: both chains use the same velocity.
    Synchronous,
}

/// Velocity shift applied to the chain started at `q_tilde`.
pub fn nudge_shift(q: &Field, q_tilde: &Field, n: usize, t: f64, variant: ShiftVariant) -> Result<Field> {
    if q.dim() != q_tilde.dim() {
        return Err(Error::DimensionMismatch { expected: q.dim(), found: q_tilde.dim() });
    }
    let factor = match variant {
        ShiftVariant::Linear => 1.0 / t,
        ShiftVariant::Pendulum => {
            let s = t.sin();
            if s.abs() < 1e-12 {
                return Err(Error::PendulumSingularT(t));
            }
            t.cos() / s
        }
        ShiftVariant::Synchronous => 0.0,
    };
    Ok(project(&q.sub(q_tilde), n, Part::Low)?.scaled(factor))
}

/// `rho = min(|q - q~|_g / eps, 1)`.
pub fn rho(spec: &CovarianceSpectrum, q: &Field, q_tilde: &Field, epsilon: f64, gamma: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok((spec.gamma_norm(gamma, &q.sub(q_tilde))? / epsilon).min(1.0))
}

/// `sqrt(rho (1 + beta V(q) + beta V(q~)))`; `beta = 1` gives `rho~`.
pub fn rho_tilde_beta(
    spec: &CovarianceSpectrum,
    q: &Field,
    q_tilde: &Field,
    epsilon: f64,
    gamma: f64,
    v: LyapunovKind,
    beta: f64,
) -> Result<f64> {
    let r = rho(spec, q, q_tilde, epsilon, gamma)?;
    if r == 0.0 {
        return Ok(0.0);
    }
    Ok((r * (1.0 + beta * (v.eval(spec, q)? + v.eval(spec, q_tilde)?))).sqrt())
}

pub fn rho_tilde(
    spec: &CovarianceSpectrum,
    q: &Field,
    q_tilde: &Field,
    epsilon: f64,
    gamma: f64,
    v: LyapunovKind,
) -> Result<f64> {
    rho_tilde_beta(spec, q, q_tilde, epsilon, gamma, v, 1.0)
}

/// One coupled transition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingEntry {
    pub shared_noise: Field,
    pub shift: Field,
    /// `|q - q~|_g` after the step.
    pub dist_gamma: f64,
    /// `|q - q~|_{g, alpha}` after the step.
    pub dist_alpha: f64,
    /// `1/2 |shift|_{1/2}^2`.
    pub kl_increment: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CouplingTrace {
    pub entries: Vec<CouplingEntry>,
}

impl CouplingTrace {
    pub fn concat(mut self, other: CouplingTrace) -> CouplingTrace {
        self.entries.extend(other.entries);
        self
    }
}

/// `1/2 sum_j |S_j|_{1/2}^2` along a trace.
pub fn girsanov_kl(spec: &CovarianceSpectrum, trace: &CouplingTrace) -> Result<f64> {
    trace.entries.iter().map(|e| Ok(0.5 * spec.gamma_norm(0.5, &e.shift)?.powi(2))).sum()
}

/// Parameters shared by every coupled step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingSetup {
    pub n_cut: usize,
    pub variant: ShiftVariant,
    /// Weight of the high modes in `|.|_{g, alpha}`.
    pub alpha: f64,
}

impl CouplingSetup {
    /// `N` from the contraction condition and `alpha = 4 (1 + lambda_1^{1-2g} L1)`.
    pub fn from_constants(spec: &CovarianceSpectrum, pot: &dyn PotentialModel, variant: ShiftVariant) -> Result<Self> {
        let c = pot.constants().ok_or_else(|| Error::MissingConstants("L1".into()))?;
        Ok(Self { n_cut: n_min_contraction(spec, c.l1), variant, alpha: 4.0 * (1.0 + spec.lambda1_reg() * c.l1) })
    }
}

/// Coupled stepping with a kernel built once.
pub struct Coupler<'a> {
    kernel: HmcKernel<'a>,
    setup: CouplingSetup,
}

impl<'a> Coupler<'a> {
    pub fn new(
        spec: &'a CovarianceSpectrum,
        pot: &'a dyn PotentialModel,
        cfg: FlowConfig,
        setup: CouplingSetup,
    ) -> Result<Self> {
        if setup.n_cut == 0 || setup.n_cut > spec.dim() {
            return Err(Error::BadN { n: setup.n_cut, dim: spec.dim() });
        }
        Ok(Self { kernel: HmcKernel::new(spec, pot, cfg)?, setup })
    }

    pub fn setup(&self) -> &CouplingSetup {
        &self.setup
    }

    /// Advances both chains with one shared draw; the second chain gets
    /// `v0 + shift`.
    pub fn step(
        &self,
        pair: &(ChainState, ChainState),
        rng: &mut SimRng,
    ) -> Result<((ChainState, ChainState), CouplingEntry)> {
        let spec = self.kernel.spectrum();
        let g = spec.gamma();
        let (a, b) = pair;
        let t = self.kernel.config().t;
        let shift = nudge_shift(&a.q, &b.q, self.setup.n_cut, t, self.setup.variant)?;
        let xi = standard_noise(spec.dim(), rng);
        let v0 = self.kernel.velocity(&xi);
        let (qa, _) = self.kernel.propagate(&a.q, &v0)?;
        let (qb, _) = self.kernel.propagate(&b.q, &v0.add(&shift))?;
        let diff = qa.sub(&qb);
        let entry = CouplingEntry {
            dist_gamma: spec.gamma_norm(g, &diff)?,
            dist_alpha: spec.alpha_norm(g, self.setup.n_cut, self.setup.alpha, &diff)?,
            kl_increment: 0.5 * spec.gamma_norm(0.5, &shift)?.powi(2),
            shared_noise: xi,
            shift,
        };
        let c = cursor(rng);
        let next = (
            ChainState { q: qa, step_index: a.step_index + 1, rng_cursor: c },
            ChainState { q: qb, step_index: b.step_index + 1, rng_cursor: c },
        );
        Ok((next, entry))
    }

    /// `n` coupled steps from `(q0, q0_tilde)`.
    pub fn run(
        &self,
        q0: &Field,
        q0_tilde: &Field,
        n: usize,
        rng: &mut SimRng,
    ) -> Result<((Field, Field), CouplingTrace)> {
        let mut pair = (ChainState::new(q0.clone()), ChainState::new(q0_tilde.clone()));
        let mut trace = CouplingTrace::default();
        for _ in 0..n {
            let (next, e) = self.step(&pair, rng)?;
            pair = next;
            trace.entries.push(e);
        }
        Ok(((pair.0.q, pair.1.q), trace))
    }
}

/// One coupled step built from scratch.
pub fn coupled_step(
    spec: &CovarianceSpectrum,
    pot: &dyn PotentialModel,
    pair: &(ChainState, ChainState),
    cfg: &FlowConfig,
    setup: CouplingSetup,
    rng: &mut SimRng,
) -> Result<((ChainState, ChainState), CouplingEntry)> {
    Coupler::new(spec, pot, cfg.clone(), setup)?.step(pair, rng)
}

/// Monte Carlo estimate of an upper bound on a Wasserstein distance: the
/// mean of the distance over pairs drawn from an explicit coupling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WassersteinEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub pairs: usize,
}

pub fn wasserstein_upper<T>(pairs: &[(T, T)], distance: impl Fn(&T, &T) -> f64) -> Result<WassersteinEstimate> {
    if pairs.is_empty() {
        return Err(Error::EmptySample);
    }
    let d: Vec<f64> = pairs.iter().map(|(a, b)| distance(a, b)).collect();
    let (mean, se) = mean_stderr(&d);
    Ok(WassersteinEstimate { mean, stderr: if d.len() > 1 { se } else { 0.0 }, pairs: d.len() })
}

/// The constants `kappa_1 .. kappa_4` as functions of `n` for fixed
/// `T, N, eps` and Lyapunov data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaModel {
    pub t: f64,
    pub l1: f64,
    pub alpha: f64,
    pub kappa1: f64,
    /// `lambda_N^{-1/2 + g}`.
    pub lambda_n_factor: f64,
    pub epsilon: f64,
    pub m_v: f64,
    pub k_v: f64,
    pub kappa_v: f64,
}

impl KappaModel {
    pub fn new(spec: &CovarianceSpectrum, l1: f64, t: f64, n_cut: usize, epsilon: f64, drift: &DriftConstants) -> Self {
        let g = spec.gamma();
        Self {
            t,
            l1,
            alpha: 4.0 * (1.0 + spec.lambda1_reg() * l1),
            kappa1: 1.0 - t * t / 12.0,
            lambda_n_factor: spec.lambda(n_cut - 1).powf(-0.5 + g),
            epsilon,
            m_v: drift.m_v,
            k_v: drift.k_v,
            kappa_v: drift.kappa_v,
        }
    }

    fn ln_kappa1(&self) -> f64 {
        (-self.t * self.t / 12.0).ln_1p()
    }

    /// `T (1 - kappa_1^2)^{1/2}`.
    fn t_root(&self) -> f64 {
        self.t * (1.0 - self.kappa1 * self.kappa1).sqrt()
    }

    pub fn kappa2(&self, n: u64) -> f64 {
        2f64.sqrt() * self.alpha * (n as f64 * self.ln_kappa1()).exp()
    }

    /// Coefficient `c` of `eps` in `kappa_3 = kappa_2 + c eps`.
    pub fn control_cost(&self) -> f64 {
        2f64.sqrt() * self.lambda_n_factor * self.alpha / (2.0 * self.t_root())
    }

    pub fn kappa3(&self, n: u64) -> f64 {
        self.kappa2(n) + self.control_cost() * self.epsilon
    }

    /// `exp(-16 L1 alpha^2 M_V^2 / (T^2 (1 - kappa_1^2)))`.
    pub fn overlap_factor(&self) -> f64 {
        let tr = self.t_root();
        (-16.0 * self.l1 * self.alpha.powi(2) * self.m_v.powi(2) / (tr * tr)).exp()
    }

    /// The same exponent with `4 L1` replaced by `lambda_N^{-1+2g}`, i.e.
    /// before the cut-off condition on `N` is used.
    pub fn overlap_factor_general(&self) -> f64 {
        let tr = self.t_root();
        (-4.0 * self.lambda_n_factor.powi(2) * self.alpha.powi(2) * self.m_v.powi(2) / (tr * tr)).exp()
    }

    /// `kappa_4(n)` with ball radius `m`.
    pub fn kappa4_ball(&self, n: u64, m: f64) -> f64 {
        let tr = self.t_root();
        0.5 * (-16.0 * self.l1 * self.alpha.powi(2) * m * m / (tr * tr)).exp() - 2.0 * m * self.kappa2(n) / self.epsilon
    }

    pub fn kappa4(&self, n: u64) -> f64 {
        self.kappa4_ball(n, self.m_v)
    }

    /// `ln kappa_5(n)` for weight `beta`.
    pub fn ln_kappa5(&self, n: u64, beta: f64) -> f64 {
        let bk = beta * self.k_v;
        let kvn = (n as f64 * self.kappa_v.ln()).exp();
        let a = (1.0 + 2.0 * bk) * self.kappa3(n);
        let b = (2.0 * bk).ln_1p() - (3.0 * bk).ln_1p();
        let b = b.max((4.0 * kvn).ln());
        let c = (1.0 - self.kappa4(n)) * (1.0 + 2.0 * (1.0 + 2.0 * kvn) * bk);
        0.5 * a.ln().max(b).max(c.ln())
    }

    /// `ln` of the uniform bound on `kappa_5(n)`, `n >= n0`.
    pub fn ln_kappa5_bound(&self, beta: f64) -> f64 {
        let bk = beta * self.k_v;
        let e = self.overlap_factor();
        let a = (2.0 * bk).ln_1p() - (3.0 * bk).ln_1p();
        let b = (-e * e / 16.0).ln_1p();
        0.5 * a.max(b)
    }
}

/// Assembled weak-Harris constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarrisConstants {
    pub t: f64,
    pub n_cut: usize,
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub kappa4: f64,
    pub kappa5: f64,
    pub kappa5_bar: f64,
    pub ln_kappa5_bar: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub n0: u64,
    pub c1: f64,
    pub c2: f64,
    /// `exp(-16 L1 alpha^2 M_V^2 / (T^2 (1 - kappa_1^2)))`.
    pub overlap_factor: f64,
    /// Same factor with `lambda_N^{-1+2g}` in place of `4 L1`.
    pub overlap_factor_general: f64,
    /// `L1 = 0`: `eps` balances the control cost against `kappa_2(n0)`.
    pub degenerate_l1: bool,
    pub drift: DriftConstants,
}

impl HarrisConstants {
    pub fn model(&self, spec: &CovarianceSpectrum, l1: f64) -> KappaModel {
        KappaModel::new(spec, l1, self.t, self.n_cut, self.epsilon, &self.drift)
    }
}

/// Smallest `n >= 1` with `n ln(k) <= ln(target)`.
fn first_power_below(ln_k: f64, ln_target: f64) -> u64 {
    if ln_target >= 0.0 {
        return 1;
    }
    ((ln_target / ln_k).ceil() as u64).max(1)
}

pub fn harris_constants(
    spec: &CovarianceSpectrum,
    pot: &dyn PotentialModel,
    t: f64,
    v: LyapunovKind,
) -> Result<HarrisConstants> {
    let c = pot.constants().ok_or_else(|| Error::MissingConstants("L1, L2".into()))?;
    let bound = t_max_basic(spec, c.l1, c.l2);
    if t > bound {
        return Err(Error::TimeConditionViolated { t, bound });
    }
    let drift = drift_constants(spec, pot, v, &FlowConfig::new(t), &SearchOptions::default())?;
    let n_cut = n_min_contraction(spec, c.l1);
    let mut m = KappaModel::new(spec, c.l1, t, n_cut, 1.0, &drift);
    let e = m.overlap_factor();
    let beta = e / (12.0 * drift.k_v);
    if !(beta > 0.0) {
        return Err(Error::NoSpectralGap { ln_kappa5: 0.0 });
    }
    let ln_k1 = m.ln_kappa1();
    let ln_kv = drift.kappa_v.ln();
    // 8 sqrt(2) alpha
    let c8 = 8.0 * 2f64.sqrt() * m.alpha;
    let n_fixed = first_power_below(ln_k1, -(4.0 * 2f64.sqrt() * m.alpha).ln())
        .max(first_power_below(ln_kv, (1.0f64 / 8.0).ln()));
    let degenerate = c.l1 == 0.0;
    // Keeps the control term of kappa_3 at most 1/8. For N >= 2 the
    // minimality of N gives lambda_N^{-1/2+g} < 2 sqrt(L1) and this is the
    // L1 form; for N = 1 (in particular L1 = 0) the general factor binds.
    let epsilon = m.t_root() / (c8 * c.l1.sqrt().max(0.5 * m.lambda_n_factor));
    m.epsilon = epsilon;
    let n_eps = first_power_below(ln_k1, (epsilon * e / (c8 * drift.m_v)).ln());
    let n0 = n_fixed.max(n_eps);

    let ln_k5 = m.ln_kappa5(n0, beta);
    let ln_bar = m.ln_kappa5_bound(beta).max(ln_k5);
    if !(ln_bar < 0.0) {
        return Err(Error::NoSpectralGap { ln_kappa5: ln_bar });
    }
    let c2 = -ln_bar / n0 as f64;
    if !(c2 > 0.0) {
        return Err(Error::NoSpectralGap { ln_kappa5: ln_bar });
    }
    let c1 = (beta.max(1.0) / beta.min(1.0)).sqrt() * (m.ln_kappa5(n0 - 1, beta) - ln_bar).exp();
    Ok(HarrisConstants {
        t,
        n_cut,
        kappa1: m.kappa1,
        kappa2: m.kappa2(n0),
        kappa3: m.kappa3(n0),
        kappa4: m.kappa4(n0),
        kappa5: ln_k5.exp(),
        kappa5_bar: ln_bar.exp(),
        ln_kappa5_bar: ln_bar,
        alpha: m.alpha,
        epsilon,
        beta,
        n0,
        c1,
        c2,
        overlap_factor: e,
        overlap_factor_general: m.overlap_factor_general(),
        degenerate_l1: degenerate,
        drift,
    })
}

/// Per-`n` statistics over coupled replicas started from one pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairStats {
    pub n: usize,
    pub mean_rho: f64,
    pub se_rho: f64,
    pub mean_rho_tilde: f64,
    pub se_rho_tilde: f64,
    /// Mean accumulated KL up to step `n`.
    pub mean_kl: f64,
}

/// Distance-like function used in reports.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceSpec {
    pub epsilon: f64,
    pub gamma: f64,
    pub lyapunov: LyapunovKind,
}

/// Runs `replicas` coupled pairs for `n_steps` and summarises every step.
#[allow(clippy::too_many_arguments)]
pub fn coupled_ensemble(
    spec: &CovarianceSpectrum,
    pot: &dyn PotentialModel,
    q0: &Field,
    q0_tilde: &Field,
    cfg: &FlowConfig,
    setup: CouplingSetup,
    dist: &DistanceSpec,
    n_steps: usize,
    replicas: usize,
    seed: u64,
) -> Result<Vec<PairStats>> {
    if replicas == 0 {
        return Err(Error::EmptySample);
    }
    let coupler = Coupler::new(spec, pot, cfg.clone(), setup)?;
    // Per replica: (rho, rho~, cumulative KL) for each step.
    let runs: Vec<Vec<(f64, f64, f64)>> = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<(f64, f64, f64)>> {
            let mut rng = stream(seed, tag::COUPLING, r as u64);
            let mut pair = (ChainState::new(q0.clone()), ChainState::new(q0_tilde.clone()));
            let mut kl = 0.0;
            let mut out = Vec::with_capacity(n_steps);
            for _ in 0..n_steps {
                let (next, e) = coupler.step(&pair, &mut rng)?;
                pair = next;
                kl += e.kl_increment;
                let r = rho(spec, &pair.0.q, &pair.1.q, dist.epsilon, dist.gamma)?;
                let rt = rho_tilde(spec, &pair.0.q, &pair.1.q, dist.epsilon, dist.gamma, dist.lyapunov)?;
                out.push((r, rt, kl));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut stats = Vec::with_capacity(n_steps);
    for n in 0..n_steps {
        let r: Vec<f64> = runs.iter().map(|x| x[n].0).collect();
        let rt: Vec<f64> = runs.iter().map(|x| x[n].1).collect();
        let kl = runs.iter().map(|x| x[n].2).sum::<f64>() / replicas as f64;
        let (mr, sr) = mean_stderr(&r);
        let (mt, st) = mean_stderr(&rt);
        stats.push(PairStats { n: n + 1, mean_rho: mr, se_rho: sr, mean_rho_tilde: mt, se_rho_tilde: st, mean_kl: kl });
    }
    Ok(stats)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContractivityRow {
    pub pair: usize,
    pub n: usize,
    pub rho0: f64,
    /// `E rho(Q_n, Q~_n) + sqrt(KL / 2)` under the nudged coupling.
    pub nudged_bound: f64,
    /// `E rho(Q_n, Q~_n)` under the synchronous coupling.
    pub synchronous_bound: f64,
    pub empirical_bound: f64,
    pub theory: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContractivityReport {
    pub epsilon: f64,
    pub replicas: usize,
    pub seed: u64,
    pub rows: Vec<ContractivityRow>,
}

fn check_contraction_conditions(
    spec: &CovarianceSpectrum,
    pot: &dyn PotentialModel,
    t: f64,
    n_cut: usize,
) -> Result<f64> {
    let c = pot.constants().ok_or_else(|| Error::MissingConstants("L1".into()))?;
    let a = 1.0 + spec.lambda1_reg() * c.l1;
    let bound = (2.0 * a).powf(-0.5);
    if t > bound {
        return Err(Error::ConditionsViolated(format!("T = {t} exceeds {bound}")));
    }
    if n_cut < spec.dim() && c.l1 > 0.0 {
        let s = 1.0 - 2.0 * spec.gamma();
        if spec.lambda(n_cut).powf(s) > 1.0 / (4.0 * c.l1) {
            return Err(Error::ConditionsViolated(format!("N = {n_cut} is below the contraction cut-off")));
        }
    }
    Ok(c.l1)
}

/// Empirical bounds on `W_rho(P^n(q0), P^n(q0~))` against `kappa_3(n) rho0`.
#[allow(clippy::too_many_arguments)]
pub fn contractivity_report(
    spec: &CovarianceSpectrum,
    pot: &dyn PotentialModel,
    pairs: &[(Field, Field)],
    cfg: &FlowConfig,
    n_cut: usize,
    epsilon: f64,
    drift: &DriftConstants,
    n_max: usize,
    replicas: usize,
    seed: u64,
) -> Result<ContractivityReport> {
    let l1 = check_contraction_conditions(spec, pot, cfg.t, n_cut)?;
    let model = KappaModel::new(spec, l1, cfg.t, n_cut, epsilon, drift);
    let g = spec.gamma();
    let dist = DistanceSpec { epsilon, gamma: g, lyapunov: drift.kind };
    let mut rows = Vec::new();
    for (pi, (q0, q1)) in pairs.iter().enumerate() {
        let rho0 = rho(spec, q0, q1, epsilon, g)?;
        if rho0 >= 1.0 {
            return Err(Error::ConditionsViolated(format!("pair {pi} has rho = 1")));
        }
        let nudged_setup = CouplingSetup { n_cut, variant: ShiftVariant::Linear, alpha: model.alpha };
        let sync_setup = CouplingSetup { variant: ShiftVariant::Synchronous, ..nudged_setup };
        let s = seed.wrapping_add(pi as u64);
        let nudged = coupled_ensemble(spec, pot, q0, q1, cfg, nudged_setup, &dist, n_max, replicas, s)?;
        let sync = coupled_ensemble(spec, pot, q0, q1, cfg, sync_setup, &dist, n_max, replicas, s)?;
        for (a, b) in nudged.iter().zip(&sync) {
            let nb = a.mean_rho + (a.mean_kl / 2.0).sqrt();
            let emp = nb.min(b.mean_rho);
            let theory = model.kappa3(a.n as u64) * rho0;
            rows.push(ContractivityRow {
                pair: pi,
                n: a.n,
                rho0,
                nudged_bound: nb,
                synchronous_bound: b.mean_rho,
                empirical_bound: emp,
                theory,
                margin: theory - emp,
            });
        }
    }
    Ok(ContractivityReport { epsilon, replicas, seed, rows })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmallnessRow {
    pub pair: usize,
    pub n: usize,
    pub nudged_bound: f64,
    pub synchronous_bound: f64,
    pub empirical_bound: f64,
    pub theory: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmallnessReport {
    pub m_ball: f64,
    pub epsilon: f64,
    pub replicas: usize,
    pub seed: u64,
    pub rows: Vec<SmallnessRow>,
}

/// Empirical bounds on `W_rho` for starts in `{|q|_g <= M}` against
/// `1 - kappa_4(n)`.
#[allow(clippy::too_many_arguments)]
pub fn smallness_report(
    spec: &CovarianceSpectrum,
    pot: &dyn PotentialModel,
    pairs: &[(Field, Field)],
    m_ball: f64,
    cfg: &FlowConfig,
    n_cut: usize,
    epsilon: f64,
    drift: &DriftConstants,
    n_max: usize,
    replicas: usize,
    seed: u64,
) -> Result<SmallnessReport> {
    let l1 = check_contraction_conditions(spec, pot, cfg.t, n_cut)?;
    let model = KappaModel::new(spec, l1, cfg.t, n_cut, epsilon, drift);
    let g = spec.gamma();
    for (i, (a, b)) in pairs.iter().enumerate() {
        let r = spec.gamma_norm(g, a)?.max(spec.gamma_norm(g, b)?);
        if r > m_ball * (1.0 + 1e-12) {
            return Err(Error::ConditionsViolated(format!("pair {i} leaves the ball of radius {m_ball}")));
        }
    }
    let dist = DistanceSpec { epsilon, gamma: g, lyapunov: drift.kind };
    let mut rows = Vec::new();
    for (pi, (q0, q1)) in pairs.iter().enumerate() {
        let nudged_setup = CouplingSetup { n_cut, variant: ShiftVariant::Linear, alpha: model.alpha };
        let sync_setup = CouplingSetup { variant: ShiftVariant::Synchronous, ..nudged_setup };
        let s = seed.wrapping_add(pi as u64);
        let nudged = coupled_ensemble(spec, pot, q0, q1, cfg, nudged_setup, &dist, n_max, replicas, s)?;
        let sync = coupled_ensemble(spec, pot, q0, q1, cfg, sync_setup, &dist, n_max, replicas, s)?;
        for (a, b) in nudged.iter().zip(&sync) {
            let nb = a.mean_rho + 1.0 - 0.5 * (-a.mean_kl).exp();
            let emp = nb.min(b.mean_rho);
            let theory = 1.0 - model.kappa4_ball(a.n as u64, m_ball);
            rows.push(SmallnessRow {
                pair: pi,
                n: a.n,
                nudged_bound: nb,
                synchronous_bound: b.mean_rho,
                empirical_bound: emp,
                theory,
                margin: theory - emp,
            });
        }
    }
    Ok(SmallnessReport { m_ball, epsilon, replicas, seed, rows })
}

/// Least-squares slope of `ln y` against `n`, with its standard error.
pub fn log_linear_slope(ns: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if ns.len() < 3 || ns.len() != ys.len() {
        return Err(Error::InvalidArgument("need at least three matching points".into()));
    }
    if ys.iter().any(|y| !(*y > 0.0)) {
        return Err(Error::InvalidArgument("log-linear fit needs positive values".into()));
    }
    let k = ns.len() as f64;
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = ns.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = ns.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = ns.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let resid: f64 = ns.iter().zip(&ly).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
    let se = (resid / (k - 2.0) / sxx).sqrt();
    Ok((slope, se))
}
