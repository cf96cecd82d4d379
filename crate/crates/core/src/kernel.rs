//! Markov kernels built on the exact flow: the preconditioned kernel, where
//! fresh velocities are drawn from `N(0, C)` at every step, and the
//! finite-dimensional variant with a diagonal mass matrix.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowConfig, FlowStats, Frame};
use crate::potential::PotentialModel;
use crate::rng::{cursor, stream, tag, SimRng};
use crate::spectrum::{CovarianceSpectrum, Field};

/// Current position of a chain plus enough bookkeeping to resume it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub q: Field,
    pub step_index: u64,
    /// Word position of the chain's random stream after the last draw.
    pub rng_cursor: u128,
}

impl ChainState {
    pub fn new(q: Field) -> Self {
        Self { q, step_index: 0, rng_cursor: 0 }
    }
}

/// What one transition consumed: the standard normal vector `xi`, the
/// velocity built from it and the integrator statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub noise: Field,
    pub v0: Field,
    pub flow: FlowStats,
}

/// Draws `xi ~ N(0, I)` of dimension `dim`.
pub fn standard_noise<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Field {
    Field::from_vec_unchecked((0..dim).map(|_| rng.sample(StandardNormal)).collect())
}

/// The preconditioned kernel `q -> q_T(q, v0)`, `v0 ~ N(0, C)`.
pub struct HmcKernel<'a> {
    spec: &'a CovarianceSpectrum,
    frame: Frame<'a>,
    cfg: FlowConfig,
    sqrt_lambda: Vec<f64>,
}

impl<'a> HmcKernel<'a> {
    pub fn new(spec: &'a CovarianceSpectrum, pot: &'a dyn PotentialModel, cfg: FlowConfig) -> Result<Self> {
        if pot.dim() != spec.dim() {
            return Err(Error::DimensionMismatch { expected: spec.dim(), found: pot.dim() });
        }
        let frame = Frame::preconditioned(spec, pot, cfg.absorb_linear)?;
        let sqrt_lambda = spec.eigenvalues().iter().map(|l| l.sqrt()).collect();
        Ok(Self { spec, frame, cfg, sqrt_lambda })
    }

    pub fn spectrum(&self) -> &CovarianceSpectrum {
        self.spec
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }

    /// `v0 = C^{1/2} xi`.
    pub fn velocity(&self, xi: &Field) -> Field {
        Field::from_vec_unchecked(xi.coeffs().iter().zip(&self.sqrt_lambda).map(|(x, s)| x * s).collect())
    }

    /// `q_T(q, v0)` for a given initial velocity.
    pub fn propagate(&self, q: &Field, v0: &Field) -> Result<(Field, FlowStats)> {
        let (qt, _, stats) = self.frame.run(q.coeffs(), v0.coeffs(), &self.cfg)?;
        Ok((Field::from_vec_unchecked(qt), stats))
    }

    /// One transition driven by `rng`.
    pub fn step(&self, state: &ChainState, rng: &mut SimRng) -> Result<(ChainState, StepRecord)> {
        let xi = standard_noise(self.spec.dim(), rng);
        let v0 = self.velocity(&xi);
        let (q, stats) = self.propagate(&state.q, &v0)?;
        let next = ChainState { q, step_index: state.step_index + 1, rng_cursor: cursor(rng) };
        Ok((next, StepRecord { noise: xi, v0, flow: stats }))
    }
}

/// One step of the preconditioned kernel.
pub fn hmc_step(
    spec: &CovarianceSpectrum,
    pot: &dyn PotentialModel,
    state: &ChainState,
    cfg: &FlowConfig,
    rng: &mut SimRng,
) -> Result<(ChainState, StepRecord)> {
    HmcKernel::new(spec, pot, cfg.clone())?.step(state, rng)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunOptions {
    /// Keep every `thin`-th state.
    pub thin: usize,
    /// Store every step's noise (memory heavy; used for replay).
    pub record_noise: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { thin: 1, record_noise: false }
    }
}

/// States `Q_1, ..., Q_n` (thinned), excluding the starting point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub chain_index: u64,
    pub thin: usize,
    pub states: Vec<Field>,
    pub noise: Vec<Field>,
    pub final_state: ChainState,
}

impl Trajectory {
    /// Coordinate `i` along the stored states.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|q| q.coeffs()[i]).collect()
    }
}

/// Runs chain `chain_index` of the run seeded by `seed` for `n_steps`.
#[allow(clippy::too_many_arguments)]
pub fn run_chain(
    spec: &CovarianceSpectrum,
    pot: &dyn PotentialModel,
    q0: &Field,
    n_steps: usize,
    cfg: &FlowConfig,
    seed: u64,
    chain_index: u64,
    opts: &RunOptions,
) -> Result<Trajectory> {
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
    }
    if opts.thin == 0 {
        return Err(Error::InvalidArgument("thin must be at least 1".into()));
    }
    let kernel = HmcKernel::new(spec, pot, cfg.clone())?;
    let mut rng = stream(seed, tag::CHAIN, chain_index);
    let mut state = ChainState::new(q0.clone());
    let mut states = Vec::with_capacity(n_steps / opts.thin);
    let mut noise = Vec::new();
    for k in 1..=n_steps {
        let (next, rec) = kernel.step(&state, &mut rng)?;
        state = next;
        if k % opts.thin == 0 {
            states.push(state.q.clone());
        }
        if opts.record_noise {
            noise.push(rec.noise);
        }
    }
    Ok(Trajectory { seed, chain_index, thin: opts.thin, states, noise, final_state: state })
}

/// Diagonal mass matrix of the finite-dimensional kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassMatrix {
    diag: Vec<f64>,
}

impl MassMatrix {
    pub fn new(diag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::InvalidArgument("mass matrix needs at least one entry".into()));
        }
        if let Some(i) = diag.iter().position(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidArgument(format!("mass entry {i} must be positive and finite")));
        }
        Ok(Self { diag })
    }

    pub fn identity(dim: usize) -> Self {
        Self { diag: vec![1.0; dim] }
    }

    /// `M = C^{-1}`, the preconditioned choice.
    pub fn inverse_of(spec: &CovarianceSpectrum) -> Self {
        Self { diag: spec.eigenvalues().iter().map(|l| 1.0 / l).collect() }
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn lambda_min(&self) -> f64 {
        self.diag.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn lambda_max(&self) -> f64 {
        self.diag.iter().copied().fold(0.0, f64::max)
    }
}

/// Constants of the finite-dimensional setting: `|D^2U| <= l1` in the plain
/// Euclidean norm and the mass-weighted dissipativity constant `l2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdConstants {
    pub l1: f64,
    pub l2: f64,
}

/// Largest admissible `T` for the mass-matrix kernel.
pub fn fd_time_bound(mass: &MassMatrix, cov: &CovarianceSpectrum, c: FdConstants) -> f64 {
    let lam_c = cov.eigenvalues()[cov.dim() - 1];
    let big_c = cov.lambda1();
    let a = (1.0 / lam_c + c.l1) / mass.lambda_min();
    let first = (2.0 * a).powf(-0.5);
    let second = c.l2.sqrt() * (mass.lambda_max() * big_c).powf(-0.5) / (2.0 * 6f64.sqrt() * a);
    first.min(second)
}

/// How the mass-matrix kernel treats its time condition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeCheck {
    Enforce(FdConstants),
    /// Run at any `T`; results carry no theoretical guarantee.
    Exploratory,
}

/// `q -> q_T(q, p0)` for `q' = M^{-1} p`, `p' = -C^{-1} q - DU(q)`,
/// `p0 ~ N(0, M)`.
pub struct FdKernel<'a> {
    frame: Frame<'a>,
    cfg: FlowConfig,
    sqrt_mass: Vec<f64>,
    inv_mass: Vec<f64>,
    exploratory: bool,
}

impl<'a> FdKernel<'a> {
    pub fn new(
        mass: &MassMatrix,
        cov: &CovarianceSpectrum,
        pot: &'a dyn PotentialModel,
        cfg: FlowConfig,
        check: TimeCheck,
    ) -> Result<Self> {
        if mass.dim() != cov.dim() {
            return Err(Error::DimensionMismatch { expected: cov.dim(), found: mass.dim() });
        }
        let inv_mass: Vec<f64> = mass.diag().iter().map(|m| 1.0 / m).collect();
        let l1 = match check {
            TimeCheck::Enforce(c) => {
                let bound = fd_time_bound(mass, cov, c);
                if cfg.t > bound {
                    return Err(Error::TimeConditionViolated { t: cfg.t, bound });
                }
                c.l1
            }
            TimeCheck::Exploratory => pot.constants().map_or(0.0, |c| c.l1),
        };
        let rate = 1.0 + l1 * inv_mass.iter().copied().fold(0.0, f64::max);
        let frame = Frame::mass(mass.diag(), cov.eigenvalues(), pot, cfg.absorb_linear, rate)?;
        Ok(Self {
            frame,
            cfg,
            sqrt_mass: mass.diag().iter().map(|m| m.sqrt()).collect(),
            inv_mass,
            exploratory: matches!(check, TimeCheck::Exploratory),
        })
    }

    pub fn is_exploratory(&self) -> bool {
        self.exploratory
    }

    /// `p0 = M^{1/2} xi`.
    pub fn momentum(&self, xi: &Field) -> Field {
        Field::from_vec_unchecked(xi.coeffs().iter().zip(&self.sqrt_mass).map(|(x, s)| x * s).collect())
    }

    /// `q_T(q, p0)`.
    pub fn propagate(&self, q: &Field, p0: &Field) -> Result<(Field, FlowStats)> {
        let u0: Vec<f64> = p0.coeffs().iter().zip(&self.inv_mass).map(|(p, w)| p * w).collect();
        let (qt, _, stats) = self.frame.run(q.coeffs(), &u0, &self.cfg)?;
        Ok((Field::from_vec_unchecked(qt), stats))
    }

    pub fn step(&self, state: &ChainState, rng: &mut SimRng) -> Result<(ChainState, StepRecord)> {
        let xi = standard_noise(self.sqrt_mass.len(), rng);
        let p0 = self.momentum(&xi);
        let (q, stats) = self.propagate(&state.q, &p0)?;
        let next = ChainState { q, step_index: state.step_index + 1, rng_cursor: cursor(rng) };
        Ok((next, StepRecord { noise: xi, v0: p0, flow: stats }))
    }
}

/// One step of the mass-matrix kernel. The record's `v0` holds `p0`.
pub fn fd_hmc_step(
    mass: &MassMatrix,
    cov: &CovarianceSpectrum,
    pot: &dyn PotentialModel,
    state: &ChainState,
    cfg: &FlowConfig,
    check: TimeCheck,
    rng: &mut SimRng,
) -> Result<(ChainState, StepRecord)> {
    FdKernel::new(mass, cov, pot, cfg.clone(), check)?.step(state, rng)
}

/// Admissible integration times and the contraction cut-off `N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeBudget {
    /// Bound required by the spectral-gap theorem.
    pub t_max_basic: f64,
    /// Bound under which the Lyapunov drift constants are valid.
    pub t_max_lyapunov: f64,
    /// First half of the contraction condition.
    pub t_max_contraction: f64,
    /// Bound for the a priori estimates.
    pub t_max_apriori: f64,
    /// The generic finite-dimensional mass-matrix bound at `M = C^{-1}`.
    /// Unlike `t_max_basic` it shrinks as the truncation grows.
    pub t_max_fd: f64,
    /// Smallest `N` with `lambda_{N+1}^{1-2 gamma} <= 1 / (4 L1)`.
    pub n_min_contraction: usize,
}

/// `T` bound with the Lyapunov shape `min{(2a)^{-1/2}, sqrt(L2)/(2 sqrt 6 a)}`
/// where `a = 1 + lambda_1^{1-2 gamma} L1`.
pub fn t_max_basic(spec: &CovarianceSpectrum, l1: f64, l2: f64) -> f64 {
    let a = 1.0 + spec.lambda1_reg() * l1;
    (2.0 * a).powf(-0.5).min(l2.sqrt() / (2.0 * 6f64.sqrt() * a))
}

/// Smallest `N >= 1` such that `lambda_{N+1}^{1-2 gamma} <= 1 / (4 L1)`,
/// with modes beyond the truncation counted as zero.
pub fn n_min_contraction(spec: &CovarianceSpectrum, l1: f64) -> usize {
    if l1 == 0.0 {
        return 1;
    }
    let s = 1.0 - 2.0 * spec.gamma();
    let cap = 1.0 / (4.0 * l1);
    // 0-based index N holds lambda_{N+1}.
    (1..spec.dim()).find(|&n| spec.lambda(n).powf(s) <= cap).unwrap_or(spec.dim())
}

pub fn admissible_times(spec: &CovarianceSpectrum, pot: &dyn PotentialModel) -> Result<TimeBudget> {
    let c = pot.constants().ok_or_else(|| Error::MissingConstants("L1 and L2".into()))?;
    let basic = t_max_basic(spec, c.l1, c.l2);
    let a = 1.0 + spec.lambda1_reg() * c.l1;
    let fd = fd_time_bound(&MassMatrix::inverse_of(spec), spec, FdConstants { l1: c.l1, l2: c.l2 });
    Ok(TimeBudget {
        t_max_basic: basic,
        t_max_lyapunov: basic,
        t_max_contraction: (2.0 * a).powf(-0.5),
        t_max_apriori: a.powf(-0.5),
        t_max_fd: fd,
        n_min_contraction: n_min_contraction(spec, c.l1),
    })
}
