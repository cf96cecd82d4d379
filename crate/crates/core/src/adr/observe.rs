//! Linear observations of a scalar trajectory.
//!
//! Entries are ordered kind by kind, then time by time, then mode by mode
//! (spectral: real part followed by imaginary part) or location by location.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::grid::{inner, Spectral, SpectralOps};
use super::solver::{AdrSolver, Trajectory};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    /// Real and imaginary parts of `theta_hat(k)` at each time.
    Spectral { modes: Vec<(i64, i64)>, times: Vec<f64> },
    /// `theta(t, x, y)` by exact trigonometric interpolation.
    Point { locations: Vec<(f64, f64)>, times: Vec<f64> },
}

impl ObservationKind {
    pub fn count(&self) -> usize {
        match self {
            ObservationKind::Spectral { modes, times } => 2 * modes.len() * times.len(),
            ObservationKind::Point { locations, times } => locations.len() * times.len(),
        }
    }
}

/// Observation layout and the diagonal noise covariance `Gamma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationSpec {
    pub kinds: Vec<ObservationKind>,
    pub gamma: Vec<f64>,
}

impl ObservationSpec {
    pub fn new(kinds: Vec<ObservationKind>, gamma: Vec<f64>) -> Result<Self> {
        let s = Self { kinds, gamma };
        s.validate()?;
        Ok(s)
    }

    /// Same noise variance for every entry.
    pub fn with_uniform_noise(kinds: Vec<ObservationKind>, variance: f64) -> Result<Self> {
        let m = kinds.iter().map(ObservationKind::count).sum();
        Self::new(kinds, vec![variance; m])
    }

    pub fn m(&self) -> usize {
        self.kinds.iter().map(ObservationKind::count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma.len() != self.m() {
            return Err(Error::DimensionMismatch { expected: self.m(), found: self.gamma.len() });
        }
        if let Some(g) = self.gamma.iter().find(|g| !(**g > 0.0) || !g.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise variances must be positive, found {g}")));
        }
        Ok(())
    }

    /// Each entry as `(step, seed)` with `entry = <seed, theta_step>`. Seeds
    /// are Hermitian and restricted to the resolved modes.
    pub fn functionals(&self, ops: &SpectralOps) -> Result<Vec<(usize, Spectral)>> {
        self.validate()?;
        let grid = &ops.grid;
        let mut out = Vec::with_capacity(self.m());
        for kind in &self.kinds {
            match kind {
                ObservationKind::Spectral { modes, times } => {
                    for &t in times {
                        let step = grid.step_of_time(t)?;
                        for &(kx, ky) in modes {
                            for unit in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)] {
                                let mut s = ops.zeros();
                                if let Some(idx) = grid.index(kx, ky) {
                                    s[idx] = unit;
                                }
                                let mut s = ops.hermitian_part(&s);
                                ops.apply_mask(&mut s);
                                out.push((step, s));
                            }
                        }
                    }
                }
                ObservationKind::Point { locations, times } => {
                    for &t in times {
                        let step = grid.step_of_time(t)?;
                        for &(x, y) in locations {
                            let n = ops.n();
                            let mut s = ops.zeros();
                            for j in 0..n {
                                for i in 0..n {
                                    let (kx, ky) = (grid.freq(i) as f64, grid.freq(j) as f64);
                                    s[j * n + i] = Complex64::from_polar(1.0, -(kx * x + ky * y));
                                }
                            }
                            ops.apply_mask(&mut s);
                            out.push((step, s));
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Evaluates the observation functionals along a trajectory.
pub fn observe_with(solver: &AdrSolver, traj: &Trajectory, functionals: &[(usize, Spectral)]) -> Result<Vec<f64>> {
    let mut cache: Option<(usize, Spectral)> = None;
    let mut out = Vec::with_capacity(functionals.len());
    for (step, seed) in functionals {
        if cache.as_ref().map(|c| c.0) != Some(*step) {
            cache = Some((*step, traj.state(solver, *step)?));
        }
        out.push(inner(seed, &cache.as_ref().expect("cached").1));
    }
    Ok(out)
}

pub fn observe(solver: &AdrSolver, traj: &Trajectory, spec: &ObservationSpec) -> Result<Vec<f64>> {
    observe_with(solver, traj, &spec.functionals(solver.ops())?)
}
