//! The subcommands. Each one writes into `<output>/<command>/` and finishes
//! with a manifest.

use std::path::Path;

use anyhow::{anyhow, bail, Context};
use hhmc::adr::potential::HessianAuditRow;
use hhmc::adr::{embedding_audit, hessian_audit, prior_spectrum_torus, AdrProblem, AdrSetup, EmbeddingAudit};
use hhmc::coupling::{coupled_ensemble, log_linear_slope, DistanceSpec};
use hhmc::io::write_states_csv;
use hhmc::kernel::HmcKernel;
use hhmc::lyapunov::DriftReport;
use hhmc::potential::{audit_potential, PotentialAudit};
use hhmc::rng::{stream, tag};
use hhmc::stats::{ar1_sigma2, integrated_autocorrelation, ks_test_normal, running_mean, CltEstimate, KsResult};
use hhmc::{
    admissible_times, clt_sigma, drift_constants, drift_verify, harris_constants, ChainState, CltMethod, CouplingSetup,
    CovarianceSpectrum, DiagonalQuadratic, Field, Gaussian, HarrisConstants, LogCosh, PotentialConstants,
    PotentialModel, SearchOptions, TimeBudget,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AdrPrior, ConfigInvalid, ExperimentConfig, Start, Target};
use crate::output::{Manifest, OutputDir};

/// Everything `adr-gen` produces and `adr-sample` consumes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdrData {
    pub setup: AdrSetup,
    pub prior: AdrPrior,
    pub truth_seed: u64,
    pub noise_seed: u64,
    pub noise: bool,
    pub y: Vec<f64>,
    pub q_true: Vec<f64>,
}

impl AdrData {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigInvalid(format!("target.adr.data: cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ConfigInvalid(format!("{}: {e}", path.display())).into())
    }

    pub fn spectrum(&self) -> anyhow::Result<CovarianceSpectrum> {
        Ok(prior_spectrum_torus(self.prior.decay, self.setup.basis_dim, self.prior.gamma)?.0)
    }

    pub fn problem(&self) -> anyhow::Result<AdrProblem> {
        AdrProblem::new(self.setup.clone(), self.y.clone()).context("adr-inverse: building the forward map")
    }
}

pub enum Model {
    Gaussian(Gaussian),
    Quadratic(DiagonalQuadratic),
    LogCosh(LogCosh),
    Adr(Box<AdrProblem>, Box<AdrData>),
}

impl Model {
    pub fn potential(&self) -> &dyn PotentialModel {
        match self {
            Model::Gaussian(p) => p,
            Model::Quadratic(p) => p,
            Model::LogCosh(p) => p,
            Model::Adr(p, _) => p.as_ref(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Model::Gaussian(_) => "gaussian",
            Model::Quadratic(_) => "quadratic",
            Model::LogCosh(_) => "log_cosh",
            Model::Adr(..) => "adr",
        }
    }

    /// Exact stationary variance of coordinate `i`, when the target is
    /// Gaussian.
    fn target_variance(&self, spec: &CovarianceSpectrum, i: usize) -> Option<f64> {
        match self {
            Model::Gaussian(_) => Some(spec.lambda(i)),
            Model::Quadratic(p) => Some(p.target_variance(spec, i)),
            _ => None,
        }
    }

    /// For Gaussian targets coordinate `i` of the exact chain is AR(1) with
    /// coefficient `cos(omega T)`; returns its asymptotic variance.
    fn ar1_oracle(&self, spec: &CovarianceSpectrum, i: usize, t: f64) -> Option<f64> {
        let s = self.target_variance(spec, i)?;
        let omega = (spec.lambda(i) / s).sqrt();
        let c = (omega * t).cos();
        Some(ar1_sigma2(c, s * (1.0 - c * c)))
    }
}

pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub spec: CovarianceSpectrum,
    pub model: Model,
}

impl Experiment {
    pub fn build(cfg: ExperimentConfig) -> anyhow::Result<Self> {
        let (spec, model) = match &cfg.target {
            Target::Adr { data } => {
                let data = AdrData::read(data)?;
                let spec = data.spectrum()?;
                let problem = data.problem()?;
                (spec, Model::Adr(Box::new(problem), Box::new(data)))
            }
            target => {
                let spec = cfg.spectrum.as_ref().expect("validated").build()?;
                let d = spec.dim();
                let model = match target {
                    Target::Gaussian {} => Model::Gaussian(Gaussian::new(d)),
                    Target::Quadratic { b } => Model::Quadratic(
                        DiagonalQuadratic::new(&spec, b.expand(d)?)
                            .map_err(|e| ConfigInvalid(format!("target.quadratic: {e}")))?,
                    ),
                    Target::LogCosh { w } => Model::LogCosh(
                        LogCosh::new(&spec, w.expand(d)?)
                            .map_err(|e| ConfigInvalid(format!("target.log_cosh: {e}")))?,
                    ),
                    Target::Adr { .. } => unreachable!(),
                };
                (spec, model)
            }
        };
        Ok(Self { cfg, spec, model })
    }

    fn pot(&self) -> &dyn PotentialModel {
        self.model.potential()
    }

    fn seed(&self) -> u64 {
        self.cfg.kernel.seed
    }
}

/// Which admissible-time bound a command relies on.
#[derive(Clone, Copy)]
enum Bound {
    /// Well-posedness of the dynamics.
    Apriori,
    /// First half of the pathwise contraction condition.
    Contraction,
    /// Drift and spectral-gap constants.
    Basic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeStatus {
    Admissible,
    Overridden,
    /// The potential declares no constants, so there is no bound to check.
    Unchecked,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeCheckReport {
    pub t: f64,
    pub bound_name: String,
    pub bound: Option<f64>,
    pub status: TimeStatus,
}

impl TimeCheckReport {
    fn watermark(&self) -> Option<String> {
        (self.status == TimeStatus::Overridden).then(|| {
            format!(
                "time condition overridden: T = {} exceeds {} = {}",
                self.t,
                self.bound_name,
                self.bound.unwrap_or(f64::NAN)
            )
        })
    }
}

fn time_check(ctx: &Experiment, which: Bound, allow_override: bool) -> anyhow::Result<TimeCheckReport> {
    let t = ctx.cfg.kernel.t;
    let name = match which {
        Bound::Apriori => "t_max_apriori",
        Bound::Contraction => "t_max_contraction",
        Bound::Basic => "t_max_basic",
    };
    if ctx.pot().constants().is_none() {
        return Ok(TimeCheckReport { t, bound_name: name.into(), bound: None, status: TimeStatus::Unchecked });
    }
    let tb = admissible_times(&ctx.spec, ctx.pot())?;
    let bound = match which {
        Bound::Apriori => tb.t_max_apriori,
        Bound::Contraction => tb.t_max_contraction,
        Bound::Basic => tb.t_max_basic,
    };
    let status = if t <= bound {
        TimeStatus::Admissible
    } else if allow_override {
        TimeStatus::Overridden
    } else {
        return Err(ConfigInvalid(format!(
            "kernel.T = {t} exceeds {name} = {bound}; pass --override-time-condition to run anyway"
        ))
        .into());
    };
    Ok(TimeCheckReport { t, bound_name: name.into(), bound: Some(bound), status })
}

struct ChainOutput {
    steps: Vec<u64>,
    states: Vec<Field>,
    /// Optional per-step scalar (for example `U(q)`), including step 0.
    trace: Vec<f64>,
    last: ChainState,
}

fn start_point(ctx: &Experiment, chain: usize) -> Field {
    match ctx.cfg.kernel.start {
        Start::Zero => Field::zeros(ctx.spec.dim()),
        Start::Prior => ctx.spec.sample_gaussian(&mut stream(ctx.seed(), tag::PROBE, chain as u64)),
    }
}

type Probe<'a> = Option<&'a (dyn Fn(&Field) -> hhmc::Result<f64> + Sync)>;

/// Runs every chain of the kernel block. Chain `k` uses stream `k` of the
/// master seed, so results do not depend on the number of workers.
fn run_chains(ctx: &Experiment, probe: Probe) -> anyhow::Result<Vec<ChainOutput>> {
    let k = &ctx.cfg.kernel;
    let kernel = HmcKernel::new(&ctx.spec, ctx.pot(), ctx.cfg.flow_config()).context("hmc-kernel: setup")?;
    (0..k.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(k.seed, tag::CHAIN, c as u64);
            let mut state = ChainState::new(start_point(ctx, c));
            let mut out = ChainOutput { steps: Vec::new(), states: Vec::new(), trace: Vec::new(), last: state.clone() };
            if let Some(p) = probe {
                out.trace.push(p(&state.q).with_context(|| format!("adr-inverse: chain {c}, step 0"))?);
            }
            for s in 1..=k.n_steps {
                state = kernel.step(&state, &mut rng).with_context(|| format!("hmc-kernel: chain {c}, step {s}"))?.0;
                if let Some(p) = probe {
                    out.trace.push(p(&state.q).with_context(|| format!("adr-inverse: chain {c}, step {s}"))?);
                }
                if s > k.burn_in && (s - k.burn_in).is_multiple_of(k.thin) {
                    out.steps.push(s as u64);
                    out.states.push(state.q.clone());
                }
            }
            out.last = state;
            Ok(out)
        })
        .collect()
}

fn write_chains(out: &mut OutputDir, chains: &[ChainOutput]) -> anyhow::Result<()> {
    for (c, ch) in chains.iter().enumerate() {
        let name = format!("chain_{c}.csv");
        write_states_csv(&out.path(&name), &ch.steps, &ch.states)?;
        let dim = ch.states.first().map_or(0, Field::dim);
        out.adopt_csv(&name, dim + 1, ch.states.len())?;
    }
    let finals: Vec<Field> = chains.iter().map(|c| c.last.q.clone()).collect();
    out.checkpoint("final_states.ckpt", &finals)
}

fn mean_se_of(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (v / n).sqrt())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoordinateSummary {
    pub index: usize,
    pub mean: f64,
    pub variance: f64,
    /// Standard error of `variance` from batch means of the squared
    /// deviations, when the chain is long enough.
    pub variance_stderr: Option<f64>,
    pub target_variance: Option<f64>,
    pub z_score: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleSummary {
    pub target: String,
    pub dim: usize,
    pub time_check: TimeCheckReport,
    pub n_chains: usize,
    pub kept_per_chain: usize,
    pub coordinates: Vec<CoordinateSummary>,
}

fn summarise(ctx: &Experiment, chains: &[ChainOutput], tc: &TimeCheckReport) -> SampleSummary {
    let shown = ctx.spec.dim().min(16);
    let coordinates = (0..shown)
        .map(|i| {
            let xs: Vec<f64> = chains.iter().flat_map(|c| c.states.iter().map(move |q| q.coeffs()[i])).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
            let variance = dev.iter().sum::<f64>() / n;
            let variance_stderr = clt_sigma(&dev, CltMethod::BatchMeans).ok().map(|e| (e.sigma2_hat / n).sqrt());
            let target_variance = ctx.model.target_variance(&ctx.spec, i);
            let z_score = match (variance_stderr, target_variance) {
                (Some(se), Some(tv)) if se > 0.0 => Some((variance - tv) / se),
                _ => None,
            };
            CoordinateSummary { index: i, mean, variance, variance_stderr, target_variance, z_score }
        })
        .collect();
    SampleSummary {
        target: ctx.model.name().into(),
        dim: ctx.spec.dim(),
        time_check: tc.clone(),
        n_chains: chains.len(),
        kept_per_chain: chains.first().map_or(0, |c| c.states.len()),
        coordinates,
    }
}

pub fn sample(ctx: &Experiment, out: &mut OutputDir, allow_override: bool) -> anyhow::Result<Option<String>> {
    let tc = time_check(ctx, Bound::Apriori, allow_override)?;
    let d = &ctx.cfg.diagnostics;
    // Fail on any inadmissible time before spending effort on chains.
    for (on, b) in [(d.coupling.enabled, Bound::Contraction), (d.lyapunov.enabled || d.harris.enabled, Bound::Basic)] {
        if on {
            time_check(ctx, b, allow_override)?;
        }
    }
    let chains = run_chains(ctx, None)?;
    write_chains(out, &chains)?;
    out.json("sample_summary.json", &summarise(ctx, &chains, &tc))?;
    let mut marks = vec![tc.watermark()];
    if d.clt.enabled {
        marks.push(clt_from(ctx, out, &chains, &tc)?);
    }
    if d.coupling.enabled {
        marks.push(couple(ctx, out, allow_override)?);
    }
    if d.lyapunov.enabled {
        marks.push(lyapunov(ctx, out, allow_override)?);
    }
    if d.harris.enabled {
        marks.push(harris(ctx, out, allow_override)?);
    }
    Ok(join_marks(marks))
}

fn join_marks(marks: Vec<Option<String>>) -> Option<String> {
    let mut v: Vec<String> = marks.into_iter().flatten().collect();
    v.dedup();
    (!v.is_empty()).then(|| v.join("; "))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CltReport {
    pub coordinate: usize,
    pub time_check: TimeCheckReport,
    pub samples: usize,
    pub batch_means: CltEstimate,
    pub autocov_sum: CltEstimate,
    pub integrated_autocorrelation: f64,
    /// Exact asymptotic variance when the target is Gaussian.
    pub oracle_sigma2: Option<f64>,
    pub batch_means_rel_err: Option<f64>,
    pub autocov_sum_rel_err: Option<f64>,
    /// Kolmogorov-Smirnov test of the standardised chain means, one per
    /// chain, when an oracle is available and there are enough chains.
    pub ks_of_chain_means: Option<KsResult>,
}

pub fn clt(ctx: &Experiment, out: &mut OutputDir, allow_override: bool) -> anyhow::Result<Option<String>> {
    let tc = time_check(ctx, Bound::Apriori, allow_override)?;
    let chains = run_chains(ctx, None)?;
    clt_from(ctx, out, &chains, &tc)
}

fn clt_from(
    ctx: &Experiment,
    out: &mut OutputDir,
    chains: &[ChainOutput],
    tc: &TimeCheckReport,
) -> anyhow::Result<Option<String>> {
    let i = ctx.cfg.diagnostics.clt.coordinate;
    if i >= ctx.spec.dim() {
        bail!(ConfigInvalid(format!("diagnostics.clt.coordinate = {i} is outside the dimension {}", ctx.spec.dim())));
    }
    let series = |c: &ChainOutput| -> Vec<f64> { c.states.iter().map(|q| q.coeffs()[i]).collect() };
    let xs = series(&chains[0]);
    let bm = clt_sigma(&xs, CltMethod::BatchMeans).context("ergodic-stats: batch means")?;
    let ac = clt_sigma(&xs, CltMethod::AutocovSum).context("ergodic-stats: autocovariance sum")?;
    let iat = integrated_autocorrelation(&xs).context("ergodic-stats: autocorrelation time")?;
    // Thinning changes the effective step; the oracle is per kept state.
    let t_eff = ctx.cfg.kernel.t * ctx.cfg.kernel.thin as f64;
    let oracle = ctx.model.ar1_oracle(&ctx.spec, i, t_eff);
    let rel = |e: &CltEstimate| oracle.map(|o| (e.sigma2_hat - o).abs() / o);
    let ks = match oracle {
        Some(o) if chains.len() >= 20 => {
            let z: Vec<f64> = chains
                .iter()
                .map(|c| {
                    let s = series(c);
                    let n = s.len() as f64;
                    n.sqrt() * (s.iter().sum::<f64>() / n) / o.sqrt()
                })
                .collect();
            Some(ks_test_normal(&z)?)
        }
        _ => None,
    };
    let report = CltReport {
        coordinate: i,
        time_check: tc.clone(),
        samples: xs.len(),
        batch_means_rel_err: rel(&bm),
        autocov_sum_rel_err: rel(&ac),
        batch_means: bm,
        autocov_sum: ac,
        integrated_autocorrelation: iat,
        oracle_sigma2: oracle,
        ks_of_chain_means: ks,
    };
    out.json("clt.json", &report)?;
    let rm = running_mean(&xs);
    let stride = (rm.len() / 1000).max(1);
    let rows: Vec<Vec<f64>> =
        rm.iter().enumerate().filter(|(k, _)| (k + 1) % stride == 0).map(|(k, m)| vec![(k + 1) as f64, *m]).collect();
    out.csv("running_mean.csv", &["n", "running_mean"], &rows)?;
    Ok(tc.watermark())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CouplingSummary {
    pub time_check: TimeCheckReport,
    pub setup: CouplingSetup,
    pub distance: DistanceSpec,
    pub replicas: usize,
    pub n_steps: usize,
    pub initial_rho_tilde: f64,
    pub final_rho_tilde: f64,
    /// Least-squares slope of `ln E rho~` per step and its standard error,
    /// when every mean is positive.
    pub log_slope: Option<(f64, f64)>,
}

pub fn couple(ctx: &Experiment, out: &mut OutputDir, allow_override: bool) -> anyhow::Result<Option<String>> {
    let tc = time_check(ctx, Bound::Contraction, allow_override)?;
    let b = &ctx.cfg.diagnostics.coupling;
    let setup = CouplingSetup::from_constants(&ctx.spec, ctx.pot(), b.variant).context("coupling-lab: setup")?;
    let draw =
        |k: u64| ctx.spec.sample_gaussian(&mut stream(ctx.seed(), tag::PROBE, (1 << 20) + k)).scaled(b.start_scale);
    let (q0, q1) = (draw(0), draw(1));
    let dist = DistanceSpec { epsilon: b.epsilon, gamma: ctx.spec.gamma(), lyapunov: b.lyapunov };
    let cfg = ctx.cfg.flow_config();
    let stats = coupled_ensemble(&ctx.spec, ctx.pot(), &q0, &q1, &cfg, setup, &dist, b.n_steps, b.replicas, ctx.seed())
        .context("coupling-lab: coupled ensemble")?;
    let rows: Vec<Vec<f64>> = stats
        .iter()
        .map(|s| vec![s.n as f64, s.mean_rho, s.se_rho, s.mean_rho_tilde, s.se_rho_tilde, s.mean_kl])
        .collect();
    out.csv("coupling.csv", &["n", "mean_rho", "se_rho", "mean_rho_tilde", "se_rho_tilde", "mean_kl"], &rows)?;
    let ns: Vec<f64> = stats.iter().map(|s| s.n as f64).collect();
    let ys: Vec<f64> = stats.iter().map(|s| s.mean_rho_tilde).collect();
    let summary = CouplingSummary {
        time_check: tc.clone(),
        setup,
        distance: dist,
        replicas: b.replicas,
        n_steps: b.n_steps,
        initial_rho_tilde: ys.first().copied().unwrap_or(f64::NAN),
        final_rho_tilde: ys.last().copied().unwrap_or(f64::NAN),
        log_slope: log_linear_slope(&ns, &ys).ok(),
    };
    out.json("coupling_summary.json", &summary)?;
    Ok(tc.watermark())
}

pub fn lyapunov(ctx: &Experiment, out: &mut OutputDir, allow_override: bool) -> anyhow::Result<Option<String>> {
    let tc = time_check(ctx, Bound::Basic, allow_override)?;
    let b = &ctx.cfg.diagnostics.lyapunov;
    let cfg = ctx.cfg.flow_config();
    let dc = drift_constants(&ctx.spec, ctx.pot(), b.kind, &cfg, &SearchOptions::default())
        .context("lyapunov-diagnostics: constants")?;
    let g = ctx.spec.gamma();
    let starts = b
        .start_radii
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let u = ctx.spec.sample_gaussian(&mut stream(ctx.seed(), tag::PROBE, (2 << 20) + k as u64));
            Ok(u.scaled(r / ctx.spec.gamma_norm(g, &u)?))
        })
        .collect::<hhmc::Result<Vec<_>>>()?;
    let report = drift_verify(&ctx.spec, ctx.pot(), &dc, &starts, &cfg, b.n_max, b.samples, ctx.seed())
        .context("lyapunov-diagnostics: Monte Carlo drift check")?;
    let rows: Vec<Vec<f64>> = report
        .rows
        .iter()
        .map(|r| vec![r.start as f64, r.n as f64, r.theory_bound, r.estimate, r.stderr, r.margin])
        .collect();
    out.csv("lyapunov.csv", &["start", "n", "theory_bound", "estimate", "stderr", "margin"], &rows)?;
    out.json::<LyapunovReport>("lyapunov.json", &LyapunovReport { time_check: tc.clone(), report })?;
    Ok(tc.watermark())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub time_check: TimeCheckReport,
    pub report: DriftReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HarrisReport {
    pub time_check: TimeCheckReport,
    pub constants: HarrisConstants,
}

pub fn harris(ctx: &Experiment, out: &mut OutputDir, allow_override: bool) -> anyhow::Result<Option<String>> {
    let tc = time_check(ctx, Bound::Basic, allow_override)?;
    let hc = harris_constants(&ctx.spec, ctx.pot(), ctx.cfg.kernel.t, ctx.cfg.diagnostics.harris.kind)
        .context("coupling-lab: weak Harris constants")?;
    out.json("harris.json", &HarrisReport { time_check: tc.clone(), constants: hc })?;
    Ok(tc.watermark())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoiseAudit {
    pub m: usize,
    /// Mean of `r_i^2 / Gamma_ii` over the residuals `r = Y - O(theta(q))`.
    pub mean_ratio: f64,
    pub stderr: f64,
    pub within_5_stderr: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdrGenReport {
    pub m: usize,
    pub dim: usize,
    /// `U(q_true)` under the generated data.
    pub misfit_at_truth: f64,
    pub noise_audit: Option<NoiseAudit>,
}

pub fn adr_gen(cfg: &ExperimentConfig, out: &mut OutputDir) -> anyhow::Result<u64> {
    let g = cfg.adr_gen.as_ref().ok_or_else(|| ConfigInvalid("adr-gen needs an adr_gen block".into()))?;
    let (spec, _) = prior_spectrum_torus(g.prior.decay, g.setup.basis_dim, g.prior.gamma)
        .map_err(|e| ConfigInvalid(format!("adr_gen.prior: {e}")))?;
    let m = g.setup.observations.m();
    let base = AdrProblem::new(g.setup.clone(), vec![0.0; m]).context("adr-inverse: building the forward map")?;
    let q_true = spec.sample_gaussian(&mut stream(g.truth_seed, tag::DATA_TRUTH, 0));
    let clean = base.observations(&q_true).context("adr-inverse: forward solve at the truth")?;
    let y = base.synthesize(&q_true, g.noise, &mut stream(g.noise_seed, tag::DATA_NOISE, 0))?;
    let misfit_at_truth = base.with_data(y.clone())?.value(&q_true)?;
    let noise_audit = g.noise.then(|| {
        let ratios: Vec<f64> =
            y.iter().zip(&clean).zip(&g.setup.observations.gamma).map(|((a, b), v)| (a - b).powi(2) / v).collect();
        let (mean_ratio, stderr) = mean_se_of(&ratios);
        NoiseAudit { m, mean_ratio, stderr, within_5_stderr: (mean_ratio - 1.0).abs() <= 5.0 * stderr }
    });
    let data = AdrData {
        setup: g.setup.clone(),
        prior: g.prior.clone(),
        truth_seed: g.truth_seed,
        noise_seed: g.noise_seed,
        noise: g.noise,
        y,
        q_true: q_true.into_vec(),
    };
    out.json("data.json", &data)?;
    out.json("adr_gen_report.json", &AdrGenReport { m, dim: spec.dim(), misfit_at_truth, noise_audit })?;
    Ok(g.truth_seed)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradientPoint {
    pub label: String,
    /// `max |adjoint - tangent| / max |tangent|`.
    pub adjoint_vs_tangent: f64,
    /// Worst relative gap between `<grad, xi>` and a central difference.
    pub finite_difference: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradientCheck {
    pub h: f64,
    pub directions: usize,
    pub points: Vec<GradientPoint>,
    pub adjoint_tolerance: f64,
    pub fd_tolerance: f64,
    pub passed: bool,
}

fn gradient_point(
    problem: &AdrProblem,
    label: &str,
    q: &Field,
    h: f64,
    directions: usize,
    seed: u64,
) -> anyhow::Result<GradientPoint> {
    let ga = problem.grad_adjoint(q).with_context(|| format!("adr-inverse: adjoint gradient at {label}"))?;
    let gt = problem.grad_tangent(q).with_context(|| format!("adr-inverse: tangent gradient at {label}"))?;
    let scale = gt.coeffs().iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let adjoint_vs_tangent = ga.max_abs_diff(&gt) / scale;
    let mut rng = stream(seed, tag::PROBE, 3 << 20);
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let xi = hhmc::kernel::standard_noise(q.dim(), &mut rng);
        let xi = xi.scaled(1.0 / xi.norm());
        let mut qp = q.clone();
        qp.axpy(h, &xi);
        let mut qm = q.clone();
        qm.axpy(-h, &xi);
        let fd = (problem.value(&qp)? - problem.value(&qm)?) / (2.0 * h);
        let an = ga.dot(&xi);
        worst = worst.max((fd - an).abs() / an.abs().max(fd.abs()).max(1e-300));
    }
    Ok(GradientPoint { label: label.into(), adjoint_vs_tangent, finite_difference: worst })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdrChainSummary {
    pub chain: usize,
    pub misfit_start: f64,
    pub misfit_final: f64,
    pub misfit_min: f64,
    /// First step with `U <= 1e-2 U(start)`.
    pub first_step_below_1pct: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdrSampleSummary {
    pub time_check: TimeCheckReport,
    pub dim: usize,
    pub m: usize,
    pub chains: Vec<AdrChainSummary>,
    /// `|mean(q) - q_true| / |q_true|` over the kept samples of all chains.
    pub posterior_mean_rel_err: f64,
}

pub fn adr_sample(ctx: &Experiment, out: &mut OutputDir, allow_override: bool) -> anyhow::Result<Option<String>> {
    let Model::Adr(problem, data) = &ctx.model else {
        bail!(ConfigInvalid("adr-sample needs an adr target".into()));
    };
    let tc = time_check(ctx, Bound::Apriori, allow_override)?;
    let value = |q: &Field| problem.value(q);
    let chains = run_chains(ctx, Some(&value))?;
    write_chains(out, &chains)?;

    let mut header = vec!["step".to_string()];
    header.extend((0..chains.len()).map(|c| format!("misfit_{c}")));
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<f64>> = (0..=ctx.cfg.kernel.n_steps)
        .map(|s| std::iter::once(s as f64).chain(chains.iter().map(|c| c.trace[s])).collect())
        .collect();
    out.csv("misfit_trace.csv", &header_ref, &rows)?;

    let q_true = Field::new(data.q_true.clone())?;
    let kept: Vec<&Field> = chains.iter().flat_map(|c| c.states.iter()).collect();
    let mut mean = Field::zeros(ctx.spec.dim());
    for q in &kept {
        mean.axpy(1.0 / kept.len() as f64, q);
    }
    let summary = AdrSampleSummary {
        time_check: tc.clone(),
        dim: ctx.spec.dim(),
        m: data.y.len(),
        chains: chains
            .iter()
            .enumerate()
            .map(|(c, ch)| {
                let u0 = ch.trace[0];
                AdrChainSummary {
                    chain: c,
                    misfit_start: u0,
                    misfit_final: *ch.trace.last().expect("nonempty"),
                    misfit_min: ch.trace.iter().copied().fold(f64::INFINITY, f64::min),
                    first_step_below_1pct: ch.trace.iter().position(|u| *u <= 1e-2 * u0),
                }
            })
            .collect(),
        posterior_mean_rel_err: mean.sub(&q_true).norm() / q_true.norm().max(f64::MIN_POSITIVE),
    };
    out.json("adr_summary.json", &summary)?;

    let gc = &ctx.cfg.gradient_check;
    let mut points =
        vec![gradient_point(problem, "origin", &Field::zeros(ctx.spec.dim()), gc.h, gc.directions, ctx.seed())?];
    // Not at the truth: with noise-free data it is the minimiser and the
    // relative check degenerates.
    let draw = ctx.spec.sample_gaussian(&mut stream(ctx.seed(), tag::PROBE, 5 << 20));
    points.push(gradient_point(problem, "prior_draw", &draw, gc.h, gc.directions, ctx.seed())?);
    points.push(gradient_point(problem, "final_state_chain_0", &chains[0].last.q, gc.h, gc.directions, ctx.seed())?);
    let (adjoint_tolerance, fd_tolerance) = (1e-8, 1e-5);
    let passed =
        points.iter().all(|p| p.adjoint_vs_tangent <= adjoint_tolerance && p.finite_difference <= fd_tolerance);
    out.json(
        "gradient_check.json",
        &GradientCheck { h: gc.h, directions: gc.directions, points, adjoint_tolerance, fd_tolerance, passed },
    )?;
    Ok(tc.watermark())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdrAudit {
    pub embedding: Vec<EmbeddingAudit>,
    pub hessian: Vec<HessianAuditRow>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuditReport {
    pub target: String,
    pub dim: usize,
    pub gamma: f64,
    pub lambda1: f64,
    pub trace: f64,
    pub trace_reg: f64,
    pub constants: Option<PotentialConstants>,
    pub time_budget: Option<TimeBudget>,
    pub kernel_t: f64,
    pub potential: Option<PotentialAudit>,
    pub adr: Option<AdrAudit>,
}

pub fn audit(ctx: &Experiment, out: &mut OutputDir) -> anyhow::Result<()> {
    let pot = ctx.pot();
    let mut rng = stream(ctx.seed(), tag::PROBE, 4 << 20);
    let constants = pot.constants();
    let time_budget = constants.map(|_| admissible_times(&ctx.spec, pot)).transpose()?;
    let (potential, adr) = match &ctx.model {
        Model::Adr(problem, data) => {
            let (_, basis) = prior_spectrum_torus(data.prior.decay, data.setup.basis_dim, data.prior.gamma)?;
            let embedding =
                [0.0, 1.0, 2.0].iter().map(|&s| embedding_audit(&ctx.spec, &basis, data.prior.decay, s)).collect();
            let hessian =
                hessian_audit(problem, &[0.0, 1.0, 10.0], 4, &mut rng).context("adr-inverse: Hessian audit")?;
            (None, Some(AdrAudit { embedding, hessian }))
        }
        _ => (
            Some(audit_potential(&ctx.spec, pot, 32, 1.0, &mut rng).context("hamiltonian-flow: potential audit")?),
            None,
        ),
    };
    out.json(
        "audit.json",
        &AuditReport {
            target: ctx.model.name().into(),
            dim: ctx.spec.dim(),
            gamma: ctx.spec.gamma(),
            lambda1: ctx.spec.lambda1(),
            trace: ctx.spec.trace(),
            trace_reg: ctx.spec.trace_reg(),
            constants,
            time_budget,
            kernel_t: ctx.cfg.kernel.t,
            potential,
            adr,
        },
    )
}

/// Entry point shared by all subcommands.
pub fn run(command: &str, cfg: ExperimentConfig, allow_override: bool) -> anyhow::Result<Manifest> {
    let dir = cfg.output.join(command);
    let config_json = serde_json::to_value(&cfg)?;
    let mut out = OutputDir::create(&dir)?;
    let (seed, watermark) = if command == "adr-gen" {
        (adr_gen(&cfg, &mut out)?, None)
    } else {
        let ctx = Experiment::build(cfg)?;
        let mark = match command {
            "sample" => sample(&ctx, &mut out, allow_override)?,
            "couple" => couple(&ctx, &mut out, allow_override)?,
            "lyapunov" => lyapunov(&ctx, &mut out, allow_override)?,
            "harris" => harris(&ctx, &mut out, allow_override)?,
            "clt" => clt(&ctx, &mut out, allow_override)?,
            "adr-sample" => adr_sample(&ctx, &mut out, allow_override)?,
            "audit" => {
                audit(&ctx, &mut out)?;
                None
            }
            other => return Err(anyhow!("unknown command {other}")),
        };
        (ctx.seed(), mark)
    };
    out.finish(command, seed, watermark, config_json)
}
