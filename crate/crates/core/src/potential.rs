//! Potentials `U` defining the target `mu(dq) ~ exp(-U(q)) N(0, C)(dq)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::{CovarianceSpectrum, Field};

/// Declared structural constants of a potential, all in the `gamma`-norm
/// scale of the spectrum the potential was built against.
///
/// * `l0 = |DU(0)|_{-gamma}`
/// * `l1` bounds `|C^gamma D^2U C^gamma|`
/// * `l2`, `l3` give the dissipativity bound
///   `|f|_g^2 + <f, C DU(f)>_g >= l2 |f|_g^2 - l3`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PotentialConstants {
    pub l0: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

/// Contract for a potential. `grad` returns the Riesz representative of
/// `DU(q)` in the coefficient basis; the dynamics only ever use `C * grad`.
pub trait PotentialModel: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, q: &Field) -> Result<f64>;

    fn grad(&self, q: &Field) -> Result<Field>;

    /// `D^2U(q)(xi, xi2)`.
    fn hess_dir(&self, q: &Field, xi: &Field, xi2: &Field) -> Result<f64>;

    fn constants(&self) -> Option<PotentialConstants>;

    /// Diagonal `B` such that `DU(q) - B q` is the nonlinear remainder. The
    /// integrator folds `B` into its exact rotation.
    fn linear_part(&self) -> Option<Vec<f64>> {
        None
    }

    /// True when `DU(q) = B q` exactly, with `B` from [`Self::linear_part`].
    fn remainder_vanishes(&self) -> bool {
        false
    }

    /// `DU(q) - B q`.
    fn remainder_grad(&self, q: &Field) -> Result<Field> {
        let mut g = self.grad(q)?;
        if let Some(b) = self.linear_part() {
            for ((gi, bi), qi) in g.coeffs_mut().iter_mut().zip(&b).zip(q.coeffs()) {
                *gi -= bi * qi;
            }
        }
        Ok(g)
    }
}

fn check(dim: usize, f: &Field) -> Result<()> {
    if f.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: f.dim() });
    }
    Ok(())
}

/// `U = 0`: the target is the Gaussian reference measure itself.
#[derive(Clone, Debug)]
pub struct Gaussian {
    dim: usize,
}

impl Gaussian {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl PotentialModel for Gaussian {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, q: &Field) -> Result<f64> {
        check(self.dim, q)?;
        Ok(0.0)
    }
    fn grad(&self, q: &Field) -> Result<Field> {
        check(self.dim, q)?;
        Ok(Field::zeros(self.dim))
    }
    fn hess_dir(&self, q: &Field, _xi: &Field, _xi2: &Field) -> Result<f64> {
        check(self.dim, q)?;
        Ok(0.0)
    }
    fn constants(&self) -> Option<PotentialConstants> {
        Some(PotentialConstants { l0: 0.0, l1: 0.0, l2: 1.0, l3: 0.0 })
    }
    fn linear_part(&self) -> Option<Vec<f64>> {
        Some(vec![0.0; self.dim])
    }
    fn remainder_vanishes(&self) -> bool {
        true
    }
}

/// `U(q) = 1/2 sum b_i q_i^2`, diagonal in the eigenbasis. The target is
/// Gaussian with variances `lambda_i / (1 + lambda_i b_i)`.
#[derive(Clone, Debug)]
pub struct DiagonalQuadratic {
    b: Vec<f64>,
    constants: PotentialConstants,
}

impl DiagonalQuadratic {
    pub fn new(spec: &CovarianceSpectrum, b: Vec<f64>) -> Result<Self> {
        if b.len() != spec.dim() {
            return Err(Error::DimensionMismatch { expected: spec.dim(), found: b.len() });
        }
        let g = spec.gamma();
        let mut l1: f64 = 0.0;
        let mut l2 = f64::INFINITY;
        for (i, (&bi, &li)) in b.iter().zip(spec.eigenvalues()).enumerate() {
            let w = 1.0 + li * bi;
            if !(w > 0.0) {
                return Err(Error::NegativeFrequencySquared { index: i });
            }
            l1 = l1.max(bi.abs() * li.powf(2.0 * g));
            l2 = l2.min(w);
        }
        Ok(Self { b, constants: PotentialConstants { l0: 0.0, l1, l2, l3: 0.0 } })
    }

    /// Same coefficient `b` on every mode.
    pub fn uniform(spec: &CovarianceSpectrum, b: f64) -> Result<Self> {
        Self::new(spec, vec![b; spec.dim()])
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.b
    }

    /// Stationary variance of coordinate `i` under the target.
    pub fn target_variance(&self, spec: &CovarianceSpectrum, i: usize) -> f64 {
        let l = spec.lambda(i);
        l / (1.0 + l * self.b[i])
    }
}

impl PotentialModel for DiagonalQuadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn value(&self, q: &Field) -> Result<f64> {
        check(self.dim(), q)?;
        Ok(0.5 * q.coeffs().iter().zip(&self.b).map(|(x, b)| b * x * x).sum::<f64>())
    }
    fn grad(&self, q: &Field) -> Result<Field> {
        check(self.dim(), q)?;
        Ok(Field::from_vec_unchecked(q.coeffs().iter().zip(&self.b).map(|(x, b)| b * x).collect()))
    }
    fn hess_dir(&self, q: &Field, xi: &Field, xi2: &Field) -> Result<f64> {
        check(self.dim(), q)?;
        check(self.dim(), xi)?;
        check(self.dim(), xi2)?;
        Ok(self.b.iter().zip(xi.coeffs()).zip(xi2.coeffs()).map(|((b, a), c)| b * a * c).sum())
    }
    fn constants(&self) -> Option<PotentialConstants> {
        Some(self.constants)
    }
    fn linear_part(&self) -> Option<Vec<f64>> {
        Some(self.b.clone())
    }
    fn remainder_vanishes(&self) -> bool {
        true
    }
}

/// `U(q) = sum w_i log cosh(q_i)` with `w_i >= 0`: smooth, convex, with a
/// bounded Hessian but a genuinely nonlinear gradient. Used to exercise the
/// integrator away from the linear case.
#[derive(Clone, Debug)]
pub struct LogCosh {
    w: Vec<f64>,
    constants: PotentialConstants,
}

impl LogCosh {
    pub fn new(spec: &CovarianceSpectrum, w: Vec<f64>) -> Result<Self> {
        if w.len() != spec.dim() {
            return Err(Error::DimensionMismatch { expected: spec.dim(), found: w.len() });
        }
        if let Some(i) = w.iter().position(|x| !(*x >= 0.0)) {
            return Err(Error::InvalidArgument(format!("weight {i} must be non-negative")));
        }
        let g = spec.gamma();
        let l1 = w.iter().zip(spec.eigenvalues()).map(|(wi, li)| wi * li.powf(2.0 * g)).fold(0.0, f64::max);
        // D^2U is positive semi-definite, so <f, C DU(f)>_g >= 0 and the
        // dissipativity bound holds with l2 = 1, l3 = 0.
        Ok(Self { w, constants: PotentialConstants { l0: 0.0, l1, l2: 1.0, l3: 0.0 } })
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }
}

fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl PotentialModel for LogCosh {
    fn dim(&self) -> usize {
        self.w.len()
    }
    fn value(&self, q: &Field) -> Result<f64> {
        check(self.dim(), q)?;
        Ok(q.coeffs().iter().zip(&self.w).map(|(x, w)| w * log_cosh(*x)).sum())
    }
    fn grad(&self, q: &Field) -> Result<Field> {
        check(self.dim(), q)?;
        Ok(Field::from_vec_unchecked(q.coeffs().iter().zip(&self.w).map(|(x, w)| w * x.tanh()).collect()))
    }
    fn hess_dir(&self, q: &Field, xi: &Field, xi2: &Field) -> Result<f64> {
        check(self.dim(), q)?;
        check(self.dim(), xi)?;
        check(self.dim(), xi2)?;
        Ok(q.coeffs()
            .iter()
            .zip(&self.w)
            .zip(xi.coeffs().iter().zip(xi2.coeffs()))
            .map(|((x, w), (a, b))| {
                let s = 1.0 / x.cosh();
                w * s * s * a * b
            })
            .sum())
    }
    fn constants(&self) -> Option<PotentialConstants> {
        Some(self.constants)
    }
}

/// Result of spot-checking a potential against its declared contract.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PotentialAudit {
    pub probes: usize,
    /// Worst relative mismatch between `<grad, xi>` and a central difference.
    pub grad_max_rel_err: f64,
    /// Worst `|hess(xi, xi2) - hess(xi2, xi)|` relative to their size.
    pub hess_max_asymmetry: f64,
    /// Largest `|D^2U(q)(C^g xi, C^g xi)|` over unit probes: a lower bound
    /// on the true `L_1`.
    pub observed_l1: f64,
    pub declared_l1: Option<f64>,
    pub l1_dominates: bool,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Random probes of `pot` at points `scale * N(0, C)`.
pub fn audit_potential<R: Rng + ?Sized>(
    spec: &CovarianceSpectrum,
    pot: &dyn PotentialModel,
    probes: usize,
    scale: f64,
    rng: &mut R,
) -> Result<PotentialAudit> {
    let d = spec.dim();
    let g = spec.gamma();
    let mut grad_err: f64 = 0.0;
    let mut asym: f64 = 0.0;
    let mut l1_obs: f64 = 0.0;
    for _ in 0..probes {
        let q = spec.sample_gaussian(rng).scaled(scale);
        let xi = spec.sample_gaussian(rng);
        let xi2 = spec.sample_gaussian(rng);
        let h = 1e-6 * scale.max(1.0);
        let mut qp = q.clone();
        qp.axpy(h, &xi);
        let mut qm = q.clone();
        qm.axpy(-h, &xi);
        let fd = (pot.value(&qp)? - pot.value(&qm)?) / (2.0 * h);
        let an = pot.grad(&q)?.dot(&xi);
        // Cancellation in the difference quotient limits what can be asked
        // of small directional derivatives.
        let floor = 1e-7 * pot.value(&q)?.abs().max(1.0);
        if (fd - an).abs() > floor {
            grad_err = grad_err.max(rel_err(fd, an));
        }
        let h12 = pot.hess_dir(&q, &xi, &xi2)?;
        let h21 = pot.hess_dir(&q, &xi2, &xi)?;
        asym = asym.max(rel_err(h12, h21).min((h12 - h21).abs()));
        // Unit direction in H_0, mapped through C^g.
        let n = xi.norm();
        if n > 0.0 {
            let u = spec.fractional_apply(g, &xi.scaled(1.0 / n))?;
            l1_obs = l1_obs.max(pot.hess_dir(&q, &u, &u)?.abs());
        }
        for i in 0..d.min(64) {
            let e = spec.fractional_apply(g, &Field::basis(d, i))?;
            l1_obs = l1_obs.max(pot.hess_dir(&q, &e, &e)?.abs());
        }
    }
    let declared = pot.constants().map(|c| c.l1);
    Ok(PotentialAudit {
        probes,
        grad_max_rel_err: grad_err,
        hess_max_asymmetry: asym,
        observed_l1: l1_obs,
        declared_l1: declared,
        l1_dominates: declared.is_some_and(|l| l >= l1_obs * (1.0 - 1e-12)),
    })
}
