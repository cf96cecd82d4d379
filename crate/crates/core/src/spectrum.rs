//! Covariance spectra, coefficient fields and the scale of norms they induce.
//!
//! Every state lives in the eigenbasis `{e_i}` of the covariance `C`, so `C`
//! and all of its fractional powers act diagonally. Indices are 0-based in
//! code; "the first `N` modes" means indices `0..N`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients `<f, e_i>` of an element of the truncated Hilbert space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field {
    coeffs: Vec<f64>,
}

impl Field {
    /// Builds a field, rejecting NaN or infinite entries.
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!("field coefficient {i}")));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { coeffs: vec![0.0; dim] }
    }

    /// Wraps coefficients without the finiteness scan. Used on hot paths
    /// whose inputs are already known to be finite.
    pub fn from_vec_unchecked(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    /// The `i`-th unit coordinate vector.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut f = Self::zeros(dim);
        f.coeffs[i] = 1.0;
        f
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// Euclidean inner product of the coefficient vectors.
    pub fn dot(&self, other: &Field) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    /// Euclidean norm of the coefficients (the `|.|_0` norm).
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self + a * x`, in place.
    pub fn axpy(&mut self, a: f64, x: &Field) {
        for (s, xi) in self.coeffs.iter_mut().zip(&x.coeffs) {
            *s += a * xi;
        }
    }

    pub fn scaled(&self, a: f64) -> Field {
        Field::from_vec_unchecked(self.coeffs.iter().map(|c| a * c).collect())
    }

    pub fn add(&self, other: &Field) -> Field {
        Field::from_vec_unchecked(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Field) -> Field {
        Field::from_vec_unchecked(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect())
    }

    /// Largest absolute coefficient difference.
    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Analytic description of the eigenvalue sequence beyond the truncation,
/// used to decide trace-class questions without numerical summation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TailModel {
    /// Only the listed eigenvalues exist.
    Finite,
    /// `lambda_j = c * j^(-p)` for all `j >= 1` (one-dimensional index).
    PowerLaw { c: f64, p: f64 },
    /// `lambda = |k|^(-p)` over nonzero wavevectors of the 2-torus.
    TorusPowerLaw { p: f64 },
    /// `lambda = exp(-a |k|)` over nonzero wavevectors of the 2-torus.
    TorusExponential { a: f64 },
}

impl TailModel {
    /// Whether `sum_j lambda_j^s` converges for the infinite sequence.
    pub fn power_sum_converges(&self, s: f64) -> bool {
        match *self {
            TailModel::Finite => true,
            TailModel::PowerLaw { p, .. } => p * s > 1.0,
            // Lattice points with |k| ~ r grow like r, so sum |k|^(-ps)
            // behaves like the integral of r^(1-ps).
            TailModel::TorusPowerLaw { p } => p * s > 2.0,
            TailModel::TorusExponential { a } => a * s > 0.0,
        }
    }
}

/// Spectrum of the covariance operator together with the regularity
/// exponent `gamma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpectrum {
    eigenvalues: Vec<f64>,
    gamma: f64,
    tail: TailModel,
    trace: f64,
    trace_reg: f64,
}

/// Which half of a low/high mode split to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Low,
    High,
}

/// The norms used throughout the diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormTag {
    /// `|f|_g = |C^(-g) f|`.
    Gamma(f64),
    /// `|Pi_N f|_g + alpha |Pi^N f|_g`.
    GammaAlpha { gamma: f64, n: usize, alpha: f64 },
}

impl CovarianceSpectrum {
    /// Validates an explicit eigenvalue list. The tail is treated as finite.
    pub fn new(eigenvalues: Vec<f64>, gamma: f64) -> Result<Self> {
        Self::with_tail(eigenvalues, gamma, TailModel::Finite)
    }

    /// Validates eigenvalues and checks that both `Tr(C)` and
    /// `Tr(C^(1-2 gamma))` converge for the declared tail.
    pub fn with_tail(eigenvalues: Vec<f64>, gamma: f64, tail: TailModel) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::InvalidArgument("spectrum needs at least one eigenvalue".into()));
        }
        if !(0.0..0.5).contains(&gamma) {
            return Err(Error::GammaOutOfRange(gamma));
        }
        for (i, &l) in eigenvalues.iter().enumerate() {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::NonPositiveEigenvalue { index: i, value: l });
            }
            if i > 0 && l > eigenvalues[i - 1] {
                return Err(Error::UnsortedSpectrum { index: i, prev: eigenvalues[i - 1], next: l });
            }
        }
        if !tail.power_sum_converges(1.0) {
            return Err(Error::NotTraceClass(format!("sum of eigenvalues diverges for {tail:?}")));
        }
        let s = 1.0 - 2.0 * gamma;
        if !tail.power_sum_converges(s) {
            return Err(Error::NotTraceClass(format!("sum of lambda^(1-2 gamma) = lambda^{s} diverges for {tail:?}")));
        }
        let trace = eigenvalues.iter().sum();
        let trace_reg = eigenvalues.iter().map(|l| l.powf(s)).sum();
        Ok(Self { eigenvalues, gamma, tail, trace, trace_reg })
    }

    /// `lambda_j = c j^(-p)`, `j = 1..=dim`, viewed as a finite truncation.
    pub fn power_law(c: f64, p: f64, dim: usize, gamma: f64) -> Result<Self> {
        Self::with_tail(power_law_values(c, p, dim), gamma, TailModel::Finite)
    }

    /// Same eigenvalues as [`Self::power_law`], but declared to continue
    /// forever: the trace conditions are then decided analytically from `p`.
    pub fn power_law_infinite_tail(c: f64, p: f64, dim: usize, gamma: f64) -> Result<Self> {
        Self::with_tail(power_law_values(c, p, dim), gamma, TailModel::PowerLaw { c, p })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn tail(&self) -> &TailModel {
        &self.tail
    }

    /// Largest eigenvalue.
    pub fn lambda1(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// `lambda_i` with a 0-based index.
    pub fn lambda(&self, i: usize) -> f64 {
        self.eigenvalues[i]
    }

    /// `Tr(C)` over the truncation.
    pub fn trace(&self) -> f64 {
        self.trace
    }

    /// `Tr(C^(1-2 gamma))` over the truncation.
    pub fn trace_reg(&self) -> f64 {
        self.trace_reg
    }

    /// `lambda_1^(1-2 gamma)`, the factor that converts `L_1` into a rate.
    pub fn lambda1_reg(&self) -> f64 {
        self.lambda1().powf(1.0 - 2.0 * self.gamma)
    }

    /// Same spectrum with a different `gamma`.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::with_tail(self.eigenvalues.clone(), gamma, self.tail.clone())
    }

    fn check_dim(&self, f: &Field) -> Result<()> {
        if f.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: f.dim() });
        }
        Ok(())
    }

    /// `C^a f`, i.e. `f_i * lambda_i^a`.
    pub fn fractional_apply(&self, exponent: f64, f: &Field) -> Result<Field> {
        self.check_dim(f)?;
        let out = f.coeffs().iter().zip(&self.eigenvalues).map(|(c, l)| c * l.powf(exponent)).collect();
        Ok(Field::from_vec_unchecked(out))
    }

    /// `|f|_g = sqrt(sum lambda_i^(-2g) f_i^2)`.
    pub fn gamma_norm(&self, g: f64, f: &Field) -> Result<f64> {
        self.check_dim(f)?;
        Ok(self.gamma_norm_sq_unchecked(g, f.coeffs()).sqrt())
    }

    pub(crate) fn gamma_norm_sq_unchecked(&self, g: f64, c: &[f64]) -> f64 {
        if g == 0.0 {
            return c.iter().map(|x| x * x).sum();
        }
        c.iter().zip(&self.eigenvalues).map(|(x, l)| l.powf(-2.0 * g) * x * x).sum()
    }

    /// Norm of a dual element (a gradient) in `H_{-g}`: `|C^g f|`.
    pub fn dual_norm(&self, g: f64, f: &Field) -> Result<f64> {
        self.gamma_norm(-g, f)
    }

    /// `<f, h>_g = <C^(-g) f, C^(-g) h>`.
    pub fn gamma_inner(&self, g: f64, f: &Field, h: &Field) -> Result<f64> {
        self.check_dim(f)?;
        self.check_dim(h)?;
        Ok(f.coeffs().iter().zip(h.coeffs()).zip(&self.eigenvalues).map(|((a, b), l)| l.powf(-2.0 * g) * a * b).sum())
    }

    /// `|Pi_N f|_g + alpha |Pi^N f|_g`.
    pub fn alpha_norm(&self, g: f64, n: usize, alpha: f64, f: &Field) -> Result<f64> {
        self.check_dim(f)?;
        if n == 0 || n > self.dim() {
            return Err(Error::BadN { n, dim: self.dim() });
        }
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        let (lo, hi) = f.coeffs().split_at(n);
        let lo_norm = self.gamma_norm_sq_unchecked(g, lo).sqrt();
        let hi_norm = hi.iter().zip(&self.eigenvalues[n..]).map(|(x, l)| l.powf(-2.0 * g) * x * x).sum::<f64>().sqrt();
        Ok(lo_norm + alpha * hi_norm)
    }

    /// Evaluates any [`NormTag`].
    pub fn norm(&self, tag: NormTag, f: &Field) -> Result<f64> {
        match tag {
            NormTag::Gamma(g) => self.gamma_norm(g, f),
            NormTag::GammaAlpha { gamma, n, alpha } => self.alpha_norm(gamma, n, alpha, f),
        }
    }

    /// One draw from `N(0, C)`: independent normals with variances `lambda_i`.
    pub fn sample_gaussian<R: Rng + ?Sized>(&self, rng: &mut R) -> Field {
        let coeffs = self
            .eigenvalues
            .iter()
            .map(|l| {
                let z: f64 = rng.sample(StandardNormal);
                l.sqrt() * z
            })
            .collect();
        Field::from_vec_unchecked(coeffs)
    }
}

fn power_law_values(c: f64, p: f64, dim: usize) -> Vec<f64> {
    (1..=dim).map(|j| c * (j as f64).powf(-p)).collect()
}

/// Keeps the first `n` modes (`Part::Low`) or the remaining ones
/// (`Part::High`). `low + high` reproduces `f` exactly.
pub fn project(f: &Field, n: usize, part: Part) -> Result<Field> {
    if n == 0 || n > f.dim() {
        return Err(Error::BadN { n, dim: f.dim() });
    }
    let mut out = f.clone();
    match part {
        Part::Low => out.coeffs_mut()[n..].iter_mut().for_each(|c| *c = 0.0),
        Part::High => out.coeffs_mut()[..n].iter_mut().for_each(|c| *c = 0.0),
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn trace_of_small_spectrum() {
        let s = CovarianceSpectrum::new(vec![1.0, 0.5, 0.25], 0.0).unwrap();
        assert_eq!(s.trace(), 1.75);
        assert_eq!(s.lambda1(), 1.0);
        assert_eq!(s.trace_reg(), 1.75);
    }

    #[test]
    fn power_law_spectrum_accepted() {
        let s = CovarianceSpectrum::power_law_infinite_tail(1.0, 2.0, 100, 0.0).unwrap();
        assert_eq!(s.dim(), 100);
        assert!(s.trace() < std::f64::consts::PI.powi(2) / 6.0);
    }

    #[test]
    fn divergent_regularised_tail_rejected() {
        // p = 1 already fails the trace test; p = 1.5 with gamma = 0.4 passes
        // the trace test but sum j^(-0.3) diverges.
        let e = CovarianceSpectrum::power_law_infinite_tail(1.0, 1.0, 10, 0.4).unwrap_err();
        assert!(matches!(e, Error::NotTraceClass(_)));
        let e = CovarianceSpectrum::power_law_infinite_tail(1.0, 1.5, 10, 0.4).unwrap_err();
        assert!(matches!(e, Error::NotTraceClass(_)));
        assert!(CovarianceSpectrum::power_law(1.0, 1.0, 10, 0.4).is_ok());
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            CovarianceSpectrum::new(vec![1.0, 0.0], 0.0),
            Err(Error::NonPositiveEigenvalue { index: 1, .. })
        ));
        assert!(matches!(CovarianceSpectrum::new(vec![1.0, 2.0], 0.0), Err(Error::UnsortedSpectrum { index: 1, .. })));
        assert!(matches!(CovarianceSpectrum::new(vec![1.0], 0.5), Err(Error::GammaOutOfRange(_))));
        assert!(matches!(CovarianceSpectrum::new(vec![1.0], -0.1), Err(Error::GammaOutOfRange(_))));
        // Equal neighbours are allowed; the order check is exact.
        assert!(CovarianceSpectrum::new(vec![1.0, 1.0], 0.0).is_ok());
        assert!(CovarianceSpectrum::new(vec![1.0, 1.0 + 1e-16 * 3.0], 0.0).is_err());
    }

    #[test]
    fn fractional_power_examples() {
        let s = CovarianceSpectrum::new(vec![4.0], 0.0).unwrap();
        let f = Field::new(vec![3.0]).unwrap();
        assert_eq!(s.fractional_apply(0.5, &f).unwrap().coeffs(), &[6.0]);
        assert_eq!(s.fractional_apply(0.0, &f).unwrap(), f);
        let bad = Field::zeros(2);
        assert!(matches!(s.fractional_apply(1.0, &bad), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn gamma_norm_examples() {
        let s = CovarianceSpectrum::new(vec![0.25], 0.0).unwrap();
        let f = Field::new(vec![1.0]).unwrap();
        assert_eq!(s.gamma_norm(0.5, &f).unwrap(), 2.0);
        let s3 = CovarianceSpectrum::new(vec![1.0, 0.5, 0.1], 0.0).unwrap();
        let g = Field::new(vec![3.0, 4.0, 0.0]).unwrap();
        assert_eq!(s3.gamma_norm(0.0, &g).unwrap(), 5.0);
    }

    #[test]
    fn projection_examples() {
        let f = Field::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(project(&f, 1, Part::Low).unwrap().coeffs(), &[1.0, 0.0, 0.0]);
        assert_eq!(project(&f, 1, Part::High).unwrap().coeffs(), &[0.0, 2.0, 3.0]);
        assert_eq!(project(&f, 3, Part::Low).unwrap(), f);
        assert!(matches!(project(&f, 0, Part::Low), Err(Error::BadN { .. })));
        assert!(matches!(project(&f, 4, Part::Low), Err(Error::BadN { .. })));
    }

    #[test]
    fn alpha_norm_examples() {
        let s = CovarianceSpectrum::new(vec![1.0, 1.0], 0.0).unwrap();
        let f = Field::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(s.alpha_norm(0.0, 1, 4.0, &f).unwrap(), 5.0);
        assert_eq!(s.alpha_norm(0.0, 2, 1.0, &f).unwrap(), s.gamma_norm(0.0, &f).unwrap());
        assert_eq!(s.norm(NormTag::GammaAlpha { gamma: 0.0, n: 1, alpha: 4.0 }, &f).unwrap(), 5.0);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let s = CovarianceSpectrum::power_law(1.0, 2.0, 8, 0.0).unwrap();
        let a = s.sample_gaussian(&mut ChaCha20Rng::seed_from_u64(7));
        let b = s.sample_gaussian(&mut ChaCha20Rng::seed_from_u64(7));
        let c = s.sample_gaussian(&mut ChaCha20Rng::seed_from_u64(8));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
