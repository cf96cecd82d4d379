//! Divergence-free Fourier basis on the 2-torus and the prior spectra
//! built on it.
//!
//! Wavevectors are taken from the half-plane `kx > 0` or `kx = 0, ky > 0`,
//! ordered by `|k|^2` and then lexicographically by `(kx, ky)`; each one
//! contributes a cosine mode followed by a sine mode. Mode `j` has stream
//! function `psi_j = cos(k.x) / (sqrt(2) pi |k|)` (or `sin`) and velocity
//! `(d/dy psi_j, -d/dx psi_j)`, which makes the family orthonormal in
//! `L^2(T^2)^2`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::grid::{Spectral, SpectralOps, VelocityGrid};
use crate::error::{Error, Result};
use crate::spectrum::{CovarianceSpectrum, Field, TailModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trig {
    Cos,
    Sin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisMode {
    pub k: (i64, i64),
    pub trig: Trig,
}

impl BasisMode {
    pub fn norm_k(&self) -> f64 {
        ((self.k.0 * self.k.0 + self.k.1 * self.k.1) as f64).sqrt()
    }
}

/// The first `dim` modes of the ordered divergence-free basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivFreeBasis {
    modes: Vec<BasisMode>,
}

impl DivFreeBasis {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("basis needs at least one mode".into()));
        }
        let pairs = dim.div_ceil(2);
        let mut r: i64 = 1;
        let mut ks = half_plane(r);
        while ks.len() < pairs {
            r += 1;
            ks = half_plane(r);
        }
        let modes = ks
            .into_iter()
            .flat_map(|k| [BasisMode { k, trig: Trig::Cos }, BasisMode { k, trig: Trig::Sin }])
            .take(dim)
            .collect();
        Ok(Self { modes })
    }

    pub fn dim(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[BasisMode] {
        &self.modes
    }

    /// Largest `|kx|` or `|ky|` among the modes.
    pub fn max_component(&self) -> i64 {
        self.modes.iter().map(|m| m.k.0.abs().max(m.k.1.abs())).max().unwrap_or(0)
    }

    /// Checks that every mode is kept by the dealiasing mask and that the
    /// products computed by the solver stay alias-free.
    pub fn check_grid(&self, ops: &SpectralOps) -> Result<()> {
        let n = ops.n() as i64;
        if 3 * self.max_component() >= n {
            return Err(Error::InvalidArgument(format!(
                "basis wavenumber {} is not resolved on a {n}^2 grid",
                self.max_component()
            )));
        }
        Ok(())
    }

    /// Stream-function coefficients of `sum_j c_j q_j`.
    pub fn stream(&self, ops: &SpectralOps, coeffs: &[f64]) -> Result<Spectral> {
        if coeffs.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: coeffs.len() });
        }
        self.check_grid(ops)?;
        let mut s = ops.zeros();
        let root2pi = std::f64::consts::SQRT_2 * std::f64::consts::PI;
        for (m, &c) in self.modes.iter().zip(coeffs) {
            if c == 0.0 {
                continue;
            }
            let a = c / (2.0 * root2pi * m.norm_k());
            let (p, q) = (
                ops.grid.index(m.k.0, m.k.1).expect("resolved mode"),
                ops.grid.index(-m.k.0, -m.k.1).expect("resolved mode"),
            );
            match m.trig {
                Trig::Cos => {
                    s[p] += Complex64::new(a, 0.0);
                    s[q] += Complex64::new(a, 0.0);
                }
                Trig::Sin => {
                    s[p] += Complex64::new(0.0, -a);
                    s[q] += Complex64::new(0.0, a);
                }
            }
        }
        Ok(s)
    }

    pub fn velocity(&self, ops: &SpectralOps, q: &Field) -> Result<VelocityGrid> {
        Ok(VelocityGrid::from_stream(ops, &self.stream(ops, q.coeffs())?))
    }

    /// Velocity of each basis mode on the grid.
    pub fn mode_velocities(&self, ops: &SpectralOps) -> Result<Vec<VelocityGrid>> {
        (0..self.dim())
            .map(|j| {
                let mut e = vec![0.0; self.dim()];
                e[j] = 1.0;
                Ok(VelocityGrid::from_stream(ops, &self.stream(ops, &e)?))
            })
            .collect()
    }
}

/// Half-plane wavevectors with `|k| <= r`, in basis order.
fn half_plane(r: i64) -> Vec<(i64, i64)> {
    let mut ks = Vec::new();
    for a in 0..=r {
        for b in -r..=r {
            if (a > 0 || b > 0) && a * a + b * b <= r * r {
                ks.push((a, b));
            }
        }
    }
    ks.sort_by_key(|&(a, b)| (a * a + b * b, a, b));
    ks
}

/// Eigenvalue decay of the prior covariance along the basis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorDecay {
    /// `lambda = |k|^{-p}`.
    Power { p: f64 },
    /// `lambda = exp(-a |k|)`.
    Exponential { a: f64 },
}

/// Embedding constant `c1` in `|q|_{H^s} <= c1 |q|_g` over the truncation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingAudit {
    pub s: f64,
    pub c1: f64,
    /// Whether the same bound holds for the infinite sequence.
    pub tail_bounded: bool,
}

pub fn prior_spectrum_torus(decay: PriorDecay, dim: usize, gamma: f64) -> Result<(CovarianceSpectrum, DivFreeBasis)> {
    let basis = DivFreeBasis::new(dim)?;
    let (values, tail): (Vec<f64>, TailModel) = match decay {
        PriorDecay::Power { p } => {
            if !(p > 0.0) {
                return Err(Error::InvalidArgument(format!("decay exponent must be positive, got {p}")));
            }
            (basis.modes().iter().map(|m| m.norm_k().powf(-p)).collect(), TailModel::TorusPowerLaw { p })
        }
        PriorDecay::Exponential { a } => {
            if !(a > 0.0) {
                return Err(Error::InvalidArgument(format!("decay rate must be positive, got {a}")));
            }
            (basis.modes().iter().map(|m| (-a * m.norm_k()).exp()).collect(), TailModel::TorusExponential { a })
        }
    };
    Ok((CovarianceSpectrum::with_tail(values, gamma, tail)?, basis))
}

/// `max_j |k_j|^s lambda_j^g` over the basis.
pub fn embedding_audit(spec: &CovarianceSpectrum, basis: &DivFreeBasis, decay: PriorDecay, s: f64) -> EmbeddingAudit {
    let g = spec.gamma();
    let c1 =
        basis.modes().iter().zip(spec.eigenvalues()).map(|(m, l)| m.norm_k().powf(s) * l.powf(g)).fold(0.0, f64::max);
    let tail_bounded = match decay {
        PriorDecay::Power { p } => s <= p * g,
        PriorDecay::Exponential { .. } => g > 0.0 || s <= 0.0,
    };
    EmbeddingAudit { s, c1, tail_bounded }
}
