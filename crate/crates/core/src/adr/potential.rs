//! The data-misfit potential `U(q) = |Gamma^{-1/2} (Y - O(theta(q)))|^2`
//! for a velocity `q` expanded in the divergence-free basis.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::basis::DivFreeBasis;
use super::grid::{Spectral, SpectralOps, TorusGrid, VelocityGrid};
use super::observe::{observe_with, ObservationSpec};
use super::solver::{AdrSolver, ScalarState, Storage, Trajectory};
use crate::error::{Error, Result};
use crate::potential::{PotentialConstants, PotentialModel};
use crate::spectrum::Field;

/// One term `a cos(k.x) + b sin(k.x)` of a band-limited initial condition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    pub k: (i64, i64),
    pub cos: f64,
    pub sin: f64,
}

/// A finite Fourier sum used as the known initial scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub terms: Vec<FourierTerm>,
}

impl InitialCondition {
    pub fn to_state(&self, ops: &SpectralOps) -> Result<ScalarState> {
        let mut c = ops.zeros();
        for t in &self.terms {
            let (kx, ky) = t.k;
            if !ops.grid.resolved(kx, ky) {
                return Err(Error::InvalidArgument(format!("initial mode {:?} is not resolved", t.k)));
            }
            let p = ops.grid.index(kx, ky).expect("resolved");
            let m = ops.grid.index(-kx, -ky).expect("resolved");
            if p == m {
                c[p] += Complex64::new(t.cos, 0.0);
            } else {
                c[p] += Complex64::new(0.5 * t.cos, -0.5 * t.sin);
                c[m] += Complex64::new(0.5 * t.cos, 0.5 * t.sin);
            }
        }
        Ok(ScalarState { coeffs: c })
    }
}

/// Everything that defines the forward map, without the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdrSetup {
    pub grid: TorusGrid,
    pub basis_dim: usize,
    pub theta0: InitialCondition,
    pub observations: ObservationSpec,
    #[serde(default)]
    pub storage: Storage,
}

/// Forward map, data and derivative machinery for the passive-scalar
/// inverse problem.
#[derive(Clone, Debug)]
pub struct AdrProblem {
    setup: AdrSetup,
    solver: AdrSolver,
    basis: DivFreeBasis,
    theta0: ScalarState,
    functionals: Vec<(usize, Spectral)>,
    mode_velocities: Vec<VelocityGrid>,
    data: Vec<f64>,
}

impl AdrProblem {
    pub fn new(setup: AdrSetup, data: Vec<f64>) -> Result<Self> {
        let solver = AdrSolver::new(setup.grid.clone())?;
        let basis = DivFreeBasis::new(setup.basis_dim)?;
        basis.check_grid(solver.ops())?;
        let theta0 = setup.theta0.to_state(solver.ops())?;
        let functionals = setup.observations.functionals(solver.ops())?;
        if data.len() != functionals.len() {
            return Err(Error::DimensionMismatch { expected: functionals.len(), found: data.len() });
        }
        let mode_velocities = basis.mode_velocities(solver.ops())?;
        Ok(Self { setup, solver, basis, theta0, functionals, mode_velocities, data })
    }

    /// Same forward map with different data.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        if data.len() != self.functionals.len() {
            return Err(Error::DimensionMismatch { expected: self.functionals.len(), found: data.len() });
        }
        Ok(Self { data, ..self.clone() })
    }

    pub fn setup(&self) -> &AdrSetup {
        &self.setup
    }

    pub fn solver(&self) -> &AdrSolver {
        &self.solver
    }

    pub fn basis(&self) -> &DivFreeBasis {
        &self.basis
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn theta0(&self) -> &ScalarState {
        &self.theta0
    }

    fn check(&self, q: &Field) -> Result<()> {
        if q.dim() != self.basis.dim() {
            return Err(Error::DimensionMismatch { expected: self.basis.dim(), found: q.dim() });
        }
        Ok(())
    }

    pub fn velocity(&self, q: &Field) -> Result<VelocityGrid> {
        self.check(q)?;
        self.basis.velocity(self.solver.ops(), q)
    }

    pub fn solve(&self, q: &Field) -> Result<(VelocityGrid, Trajectory)> {
        let vel = self.velocity(q)?;
        let tr = self.solver.solve_scalar(&vel, &self.theta0, None, self.setup.storage)?;
        Ok((vel, tr))
    }

    pub fn observe_trajectory(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        observe_with(&self.solver, traj, &self.functionals)
    }

    /// `O(theta(q))`.
    pub fn observations(&self, q: &Field) -> Result<Vec<f64>> {
        let (_, tr) = self.solve(q)?;
        self.observe_trajectory(&tr)
    }

    /// `Gamma^{-1} (Y - O(theta))`.
    fn weighted_residual(&self, obs: &[f64]) -> Vec<f64> {
        self.data.iter().zip(obs).zip(&self.setup.observations.gamma).map(|((y, o), g)| (y - o) / g).collect()
    }

    fn misfit(&self, obs: &[f64]) -> f64 {
        self.data.iter().zip(obs).zip(&self.setup.observations.gamma).map(|((y, o), g)| (y - o).powi(2) / g).sum()
    }

    /// Velocity of the coefficient vector `xi`.
    pub fn direction(&self, xi: &Field) -> Result<VelocityGrid> {
        self.velocity(xi)
    }

    /// `U^xi` from one tangent solve.
    pub fn directional_tangent(&self, q: &Field, xi: &Field) -> Result<f64> {
        let (vel, tr) = self.solve(q)?;
        let w = self.weighted_residual(&self.observe_trajectory(&tr)?);
        let psi = self.solver.solve_tangent(&vel, &self.direction(xi)?, &tr)?;
        let o = self.observe_trajectory(&psi)?;
        Ok(-2.0 * w.iter().zip(&o).map(|(a, b)| a * b).sum::<f64>())
    }

    /// `DU(q)` from one adjoint sweep.
    pub fn grad_adjoint(&self, q: &Field) -> Result<Field> {
        let (vel, tr) = self.solve(q)?;
        let w = self.weighted_residual(&self.observe_trajectory(&tr)?);
        let seeds: Vec<(usize, Spectral)> = self
            .functionals
            .iter()
            .zip(&w)
            .map(|((step, s), wi)| (*step, s.iter().map(|z| z * wi).collect()))
            .collect();
        let j = self.solver.adjoint_directional(&vel, &tr, &seeds, &self.mode_velocities)?;
        Ok(Field::from_vec_unchecked(j.into_iter().map(|x| -2.0 * x).collect()))
    }

    /// `DU(q)` from one tangent solve per basis direction.
    pub fn grad_tangent(&self, q: &Field) -> Result<Field> {
        let (vel, tr) = self.solve(q)?;
        let w = self.weighted_residual(&self.observe_trajectory(&tr)?);
        let mut g = Vec::with_capacity(self.basis.dim());
        for d in &self.mode_velocities {
            let psi = self.solver.solve_tangent(&vel, d, &tr)?;
            let o = self.observe_trajectory(&psi)?;
            g.push(-2.0 * w.iter().zip(&o).map(|(a, b)| a * b).sum::<f64>());
        }
        Ok(Field::from_vec_unchecked(g))
    }

    /// `U^{xi, xi2}` from two tangent solves and one second-variation solve.
    pub fn hess_dir_tangent(&self, q: &Field, xi: &Field, xi2: &Field) -> Result<f64> {
        let (vel, tr) = self.solve(q)?;
        let w = self.weighted_residual(&self.observe_trajectory(&tr)?);
        let (d1, d2) = (self.direction(xi)?, self.direction(xi2)?);
        let p1 = self.solver.solve_tangent(&vel, &d1, &tr)?;
        let p2 = self.solver.solve_tangent(&vel, &d2, &tr)?;
        let p12 = self.solver.solve_second_variation(&vel, &d1, &d2, &tr, &p1, &p2)?;
        let (o1, o2, o12) =
            (self.observe_trajectory(&p1)?, self.observe_trajectory(&p2)?, self.observe_trajectory(&p12)?);
        let g = &self.setup.observations.gamma;
        let first: f64 = o1.iter().zip(&o2).zip(g).map(|((a, b), gi)| a * b / gi).sum();
        let second: f64 = w.iter().zip(&o12).map(|(a, b)| a * b).sum();
        Ok(2.0 * first - 2.0 * second)
    }

    /// Observations of `theta(q_true)` plus, when `noise` is set,
    /// independent `N(0, Gamma_ii)` errors.
    pub fn synthesize<R: Rng + ?Sized>(&self, q_true: &Field, noise: bool, rng: &mut R) -> Result<Vec<f64>> {
        let mut y = self.observations(q_true)?;
        if noise {
            for (yi, g) in y.iter_mut().zip(&self.setup.observations.gamma) {
                let z: f64 = StandardNormal.sample(rng);
                *yi += g.sqrt() * z;
            }
        }
        Ok(y)
    }
}

impl PotentialModel for AdrProblem {
    fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn value(&self, q: &Field) -> Result<f64> {
        let (_, tr) = self.solve(q)?;
        Ok(self.misfit(&self.observe_trajectory(&tr)?))
    }

    fn grad(&self, q: &Field) -> Result<Field> {
        self.grad_adjoint(q)
    }

    fn hess_dir(&self, q: &Field, xi: &Field, xi2: &Field) -> Result<f64> {
        self.hess_dir_tangent(q, xi, xi2)
    }

    fn constants(&self) -> Option<PotentialConstants> {
        None
    }
}

/// Largest sampled `|U^{xi, xi2}(q)|` over random unit directions at each
/// radius `|q| = r`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HessianAuditRow {
    pub radius: f64,
    pub max_abs: f64,
    pub samples: usize,
}

pub fn hessian_audit<R: Rng + ?Sized>(
    problem: &AdrProblem,
    radii: &[f64],
    samples: usize,
    rng: &mut R,
) -> Result<Vec<HessianAuditRow>> {
    let d = problem.dim();
    let unit = |rng: &mut R| {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let f = Field::from_vec_unchecked(v);
        let n = f.norm();
        f.scaled(1.0 / n)
    };
    let mut rows = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let q = unit(rng).scaled(r);
            let (a, b) = (unit(rng), unit(rng));
            worst = worst.max(problem.hess_dir(&q, &a, &b)?.abs());
        }
        rows.push(HessianAuditRow { radius: r, max_abs: worst, samples });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::super::observe::ObservationKind;
    use super::*;
    use rand::SeedableRng;

    pub(crate) fn demo_setup(n: usize, dim: usize) -> AdrSetup {
        let modes = vec![(1, 0), (0, 1), (1, 1), (2, 0), (0, 2), (2, 1)];
        AdrSetup {
            grid: TorusGrid::new(n, 0.05, 0.05, 1.0).unwrap(),
            basis_dim: dim,
            theta0: InitialCondition {
                terms: vec![
                    FourierTerm { k: (1, 0), cos: 1.0, sin: 0.0 },
                    FourierTerm { k: (0, 2), cos: 0.0, sin: 1.0 },
                    FourierTerm { k: (1, 1), cos: 0.5, sin: 0.2 },
                ],
            },
            observations: ObservationSpec::with_uniform_noise(
                vec![ObservationKind::Spectral { modes, times: vec![0.5, 1.0] }],
                1e-2,
            )
            .unwrap(),
            storage: Storage::Full,
        }
    }

    fn random_field(dim: usize, scale: f64, seed: u64) -> Field {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        Field::from_vec_unchecked(
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect::<Vec<f64>>(),
        )
    }

    fn problem(n: usize, dim: usize) -> AdrProblem {
        let setup = demo_setup(n, dim);
        let p = AdrProblem::new(setup.clone(), vec![0.0; setup.observations.m()]).unwrap();
        let y = p.observations(&random_field(dim, 0.3, 1)).unwrap();
        p.with_data(y).unwrap()
    }

    #[test]
    fn adjoint_matches_tangent_gradient() {
        let p = problem(32, 32);
        let q = random_field(32, 0.2, 2);
        let a = p.grad_adjoint(&q).unwrap();
        let t = p.grad_tangent(&q).unwrap();
        let rel = a.sub(&t).norm() / t.norm();
        assert!(rel < 1e-10, "{rel}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        let p = problem(32, 12);
        let q = random_field(12, 0.2, 3);
        let g = p.grad(&q).unwrap();
        for s in 0..3 {
            let xi = random_field(12, 1.0, 10 + s);
            let h = 1e-4;
            let fd = (p.value(&q.add(&xi.scaled(h))).unwrap() - p.value(&q.sub(&xi.scaled(h))).unwrap()) / (2.0 * h);
            let an = g.dot(&xi);
            assert!((fd - an).abs() / an.abs() < 1e-5, "{fd} {an}");
        }
    }

    #[test]
    fn hessian_matches_second_differences() {
        let p = problem(32, 12);
        let q = random_field(12, 0.2, 4);
        let (a, b) = (random_field(12, 1.0, 5), random_field(12, 1.0, 6));
        let h = 1e-3;
        let fd =
            (p.grad(&q.add(&b.scaled(h))).unwrap().dot(&a) - p.grad(&q.sub(&b.scaled(h))).unwrap().dot(&a)) / (2.0 * h);
        let an = p.hess_dir(&q, &a, &b).unwrap();
        let sym = p.hess_dir(&q, &b, &a).unwrap();
        assert!((fd - an).abs() / an.abs() < 1e-3, "{fd} {an}");
        assert!((an - sym).abs() < 1e-10 * an.abs().max(1.0));
    }

    #[test]
    fn zero_residual() {
        let p = problem(32, 12);
        let q = random_field(12, 0.3, 1);
        let p = p.with_data(p.observations(&q).unwrap()).unwrap();
        assert_eq!(p.value(&q).unwrap(), 0.0);
        assert!(p.grad(&q).unwrap().norm() < 1e-12);
    }
}
