//! Experiment configuration: a JSON file, optionally patched by dotted
//! command-line overrides such as `--kernel.T=0.2`.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;
use std::path::{Path, PathBuf};

use hhmc::adr::{AdrSetup, PriorDecay};
use hhmc::{CovarianceSpectrum, FlowConfig, FlowMethod, LyapunovKind, ShiftVariant};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// A configuration that could not be read or does not make sense.
#[derive(Debug)]
pub struct ConfigInvalid(pub String);

impl fmt::Display for ConfigInvalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigInvalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ConfigInvalid(msg.into()).into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Target {
    /// `U = 0`.
    Gaussian {},
    /// `U(q) = 1/2 sum b_i q_i^2`; `b` is one number or one per mode.
    Quadratic { b: Coefficients },
    /// `U(q) = sum w_i log cosh q_i`.
    LogCosh { w: Coefficients },
    /// Passive-scalar inverse problem read from a `data.json` written by
    /// `adr-gen`.
    Adr { data: PathBuf },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficients {
    Uniform(f64),
    PerMode(Vec<f64>),
}

impl Coefficients {
    pub fn expand(&self, dim: usize) -> anyhow::Result<Vec<f64>> {
        match self {
            Coefficients::Uniform(x) => Ok(vec![*x; dim]),
            Coefficients::PerMode(v) if v.len() == dim => Ok(v.clone()),
            Coefficients::PerMode(v) => Err(invalid(format!("expected {dim} coefficients, found {}", v.len()))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Eigenvalues {
    /// `lambda_j = c j^{-p}`, `j = 1..=dim`.
    PowerLaw { c: f64, p: f64 },
    /// Explicit non-increasing list; `dim` must match its length.
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub eigenvalues: Eigenvalues,
    pub dim: usize,
    #[serde(default)]
    pub gamma: f64,
}

impl SpectrumConfig {
    pub fn build(&self) -> anyhow::Result<CovarianceSpectrum> {
        let spec = match &self.eigenvalues {
            Eigenvalues::PowerLaw { c, p } => CovarianceSpectrum::power_law(*c, *p, self.dim, self.gamma),
            Eigenvalues::Explicit(v) => {
                if v.len() != self.dim {
                    return Err(invalid(format!("spectrum.dim = {} but {} eigenvalues given", self.dim, v.len())));
                }
                CovarianceSpectrum::new(v.clone(), self.gamma)
            }
        };
        spec.map_err(|e| invalid(format!("spectrum: {e}")))
    }
}

fn default_tol() -> f64 {
    1e-10
}
fn default_true() -> bool {
    true
}
fn default_max_substeps() -> usize {
    1 << 20
}

/// Integrator settings; the integration time lives in the kernel block.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowBlock {
    #[serde(default)]
    pub substeps: Option<usize>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub method: FlowMethod,
    #[serde(default = "default_true")]
    pub absorb_linear: bool,
    #[serde(default = "default_max_substeps")]
    pub max_substeps: usize,
}

impl Default for FlowBlock {
    fn default() -> Self {
        Self {
            substeps: None,
            tol: default_tol(),
            method: FlowMethod::default(),
            absorb_linear: true,
            max_substeps: default_max_substeps(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    /// Every chain starts at the origin.
    #[default]
    Zero,
    /// Each chain starts from its own draw of `N(0, C)`.
    Prior,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelBlock {
    #[serde(rename = "T")]
    pub t: f64,
    pub n_steps: usize,
    #[serde(default = "one")]
    pub n_chains: usize,
    pub seed: u64,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "one")]
    pub thin: usize,
    #[serde(default)]
    pub start: Start,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingBlock {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_coupled_steps")]
    pub n_steps: usize,
    #[serde(default = "default_variant")]
    pub variant: ShiftVariant,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_kind")]
    pub lyapunov: LyapunovKind,
    /// Both chains start from independent prior draws scaled by this.
    #[serde(default = "default_scale")]
    pub start_scale: f64,
}

fn default_replicas() -> usize {
    32
}
fn default_coupled_steps() -> usize {
    50
}
fn default_variant() -> ShiftVariant {
    ShiftVariant::Linear
}
fn default_epsilon() -> f64 {
    1.0
}
fn default_kind() -> LyapunovKind {
    LyapunovKind::Poly { i: 2 }
}
fn default_scale() -> f64 {
    3.0
}

impl Default for CouplingBlock {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({})).expect("defaults")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovBlock {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_kind")]
    pub kind: LyapunovKind,
    /// `|q0|_g` of the starting points; directions are prior draws.
    #[serde(default = "default_radii")]
    pub start_radii: Vec<f64>,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_radii() -> Vec<f64> {
    vec![0.1, 1.0, 10.0]
}
fn default_n_max() -> usize {
    5
}
fn default_samples() -> usize {
    1000
}

impl Default for LyapunovBlock {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({})).expect("defaults")
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltBlock {
    #[serde(default)]
    pub enabled: bool,
    /// The observable is `<q, e_i>` for this `i`.
    #[serde(default)]
    pub coordinate: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarrisBlock {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_kind")]
    pub kind: LyapunovKind,
}

impl Default for HarrisBlock {
    fn default() -> Self {
        Self { enabled: false, kind: default_kind() }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Diagnostics {
    #[serde(default)]
    pub coupling: CouplingBlock,
    #[serde(default)]
    pub lyapunov: LyapunovBlock,
    #[serde(default)]
    pub clt: CltBlock,
    #[serde(default)]
    pub harris: HarrisBlock,
}

/// Prior of the inverse problem: eigenvalues decay along the
/// divergence-free basis as `decay` prescribes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdrPrior {
    pub decay: PriorDecay,
    #[serde(default)]
    pub gamma: f64,
}

/// Inputs of `adr-gen`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdrGenBlock {
    pub setup: AdrSetup,
    pub prior: AdrPrior,
    pub truth_seed: u64,
    pub noise_seed: u64,
    #[serde(default = "default_true")]
    pub noise: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientCheckBlock {
    /// Finite-difference step.
    #[serde(default = "default_fd_h")]
    pub h: f64,
    #[serde(default = "default_directions")]
    pub directions: usize,
}

fn default_fd_h() -> f64 {
    1e-5
}
fn default_directions() -> usize {
    3
}

impl Default for GradientCheckBlock {
    fn default() -> Self {
        Self { h: default_fd_h(), directions: default_directions() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: Target,
    /// Required except for `adr` targets, whose prior comes with the data.
    #[serde(default)]
    pub spectrum: Option<SpectrumConfig>,
    #[serde(default)]
    pub flow: FlowBlock,
    pub kernel: KernelBlock,
    #[serde(default)]
    pub diagnostics: Diagnostics,
    #[serde(default)]
    pub adr_gen: Option<AdrGenBlock>,
    #[serde(default)]
    pub gradient_check: GradientCheckBlock,
    pub output: PathBuf,
}

impl ExperimentConfig {
    /// Reads `path`, applies `overrides` (`("kernel.T", "0.2")`) and checks
    /// the result.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        let mut value: Value =
            serde_json::from_str(&text).map_err(|e| invalid(format!("{} is not valid JSON: {e}", path.display())))?;
        for (key, raw) in overrides {
            apply_override(&mut value, key, raw)?;
        }
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> anyhow::Result<Self> {
        let cfg: Self = serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> anyhow::Result<()> {
        let k = &self.kernel;
        if !(k.t > 0.0) || !k.t.is_finite() {
            return Err(invalid(format!("kernel.T must be positive, got {}", k.t)));
        }
        if k.n_steps == 0 || k.n_chains == 0 || k.thin == 0 {
            return Err(invalid("kernel.n_steps, kernel.n_chains and kernel.thin must be at least 1"));
        }
        if k.burn_in >= k.n_steps {
            return Err(invalid("kernel.burn_in must be smaller than kernel.n_steps"));
        }
        if !(self.flow.tol > 0.0) {
            return Err(invalid("flow.tol must be positive"));
        }
        // An adr target's data file is checked when it is loaded, since
        // `adr-gen` may be about to create it.
        if !matches!(self.target, Target::Adr { .. }) && self.spectrum.is_none() {
            return Err(invalid("a spectrum block is required for this target"));
        }
        Ok(())
    }

    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            t: self.kernel.t,
            substeps: self.flow.substeps,
            tol: self.flow.tol,
            method: self.flow.method,
            absorb_linear: self.flow.absorb_linear,
            max_substeps: self.flow.max_substeps,
        }
    }
}

/// Splits `--a.b=value` arguments off `args`; everything else is returned
/// for the regular parser. Only keys containing a dot are treated as
/// overrides, plus the bare `--output=...`.
pub fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    for a in args {
        if let Some(body) = a.strip_prefix("--") {
            if let Some((key, val)) = body.split_once('=') {
                if key.contains('.') || key == "output" {
                    overrides.push((key.to_string(), val.to_string()));
                    continue;
                }
            }
        }
        rest.push(a);
    }
    (rest, overrides)
}

/// Sets `root[a][b]... = raw`, parsing `raw` as JSON when possible and as a
/// string otherwise. Missing intermediate objects are created.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> anyhow::Result<()> {
    let parsed = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid(format!("malformed override key `{key}`")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| invalid(format!("override `{key}`: `{part}` is not inside an object")))?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node.as_object_mut().ok_or_else(|| invalid(format!("override `{key}` does not point into an object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}
