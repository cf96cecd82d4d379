//! Time stepping for `d/dt phi + q . grad phi = kappa Lap phi + f` and its
//! first and second variations with respect to `q`.
//!
//! Diffusion is integrated exactly per mode through the integrating factor
//! `exp(-kappa |k|^2 t)`; the dealiased advection and forcing terms use the
//! three-stage low-storage Runge-Kutta scheme of Williamson. The tangent and
//! second-variation solves apply the same scheme with forcing built from the
//! stage values of the lower-order solves, so they are the exact
//! derivatives of the discrete solution map; the adjoint is the exact
//! transpose of the tangent scheme.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::grid::{axpy, Spectral, SpectralOps, TorusGrid, VelocityGrid};
use crate::error::{Error, Result};

const RK_A: [f64; 3] = [0.0, -5.0 / 9.0, -153.0 / 128.0];
const RK_B: [f64; 3] = [1.0 / 3.0, 15.0 / 16.0, 8.0 / 15.0];
const RK_C: [f64; 3] = [0.0, 1.0 / 3.0, 3.0 / 4.0];

/// How much of a scalar trajectory is kept in memory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Storage {
    /// Every step.
    #[default]
    Full,
    /// Every `every`-th step; the rest is recomputed on demand.
    Checkpoint { every: usize },
}

/// A scalar field in Fourier space.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarState {
    pub coeffs: Spectral,
}

impl ScalarState {
    pub fn from_physical(ops: &SpectralOps, values: &[f64]) -> Self {
        Self { coeffs: ops.forward(values) }
    }

    /// Samples `f(x, y)` on the grid.
    pub fn from_fn(ops: &SpectralOps, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = ops.n();
        let phys: Vec<f64> = (0..n * n)
            .map(|x| {
                let (a, b) = ops.grid.point(x % n, x / n);
                f(a, b)
            })
            .collect();
        Self::from_physical(ops, &phys)
    }

    pub fn to_physical(&self, ops: &SpectralOps) -> Vec<f64> {
        ops.inverse(&self.coeffs)
    }

    /// The `(0, 0)` coefficient, i.e. the spatial mean.
    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }
}

/// States at every step (or at checkpoints), with what is needed to
/// recompute the ones not stored.
#[derive(Clone, Debug)]
pub struct Trajectory {
    dt: f64,
    every: usize,
    states: Vec<Option<Spectral>>,
    replay: Option<(VelocityGrid, Option<Spectral>)>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn stored_states(&self) -> usize {
        self.states.iter().filter(|s| s.is_some()).count()
    }

    /// State after `k` steps.
    pub fn state(&self, solver: &AdrSolver, k: usize) -> Result<Spectral> {
        if k > self.steps() {
            return Err(Error::MissingSnapshot(k as f64 * self.dt));
        }
        if let Some(s) = &self.states[k] {
            return Ok(s.clone());
        }
        let (vel, forcing) = self.replay.as_ref().ok_or(Error::MissingSnapshot(k as f64 * self.dt))?;
        let c = (k / self.every) * self.every;
        let mut x = self.states[c].clone().ok_or(Error::MissingSnapshot(c as f64 * self.dt))?;
        for _ in c..k {
            x = solver.step(vel, &x, &mut |_| forcing.clone(), None);
        }
        Ok(x)
    }

    /// All states `0..=steps`, recomputed where needed.
    pub fn all_states(&self, solver: &AdrSolver) -> Result<Vec<Spectral>> {
        let mut out: Vec<Spectral> = Vec::with_capacity(self.states.len());
        for k in 0..self.states.len() {
            match &self.states[k] {
                Some(s) => out.push(s.clone()),
                None => {
                    let (vel, forcing) = self.replay.as_ref().ok_or(Error::MissingSnapshot(k as f64 * self.dt))?;
                    let next = solver.step(vel, &out[k - 1], &mut |_| forcing.clone(), None);
                    out.push(next);
                }
            }
        }
        Ok(out)
    }
}

/// Grid-bound solver with precomputed FFT plans.
#[derive(Clone, Debug)]
pub struct AdrSolver {
    ops: SpectralOps,
}

impl AdrSolver {
    pub fn new(grid: TorusGrid) -> Result<Self> {
        Ok(Self { ops: SpectralOps::new(grid)? })
    }

    pub fn ops(&self) -> &SpectralOps {
        &self.ops
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.ops.grid
    }

    pub fn check_cfl(&self, vel: &VelocityGrid) -> Result<()> {
        let limit = vel.cfl_limit(self.grid());
        let dt = self.grid().step_dt();
        if dt > limit {
            return Err(Error::CflViolated { dt, limit });
        }
        Ok(())
    }

    /// One step from `x`. `forcing(i)` is added to the right-hand side at
    /// stage `i`; stage values are pushed to `stages` when given.
    pub fn step(
        &self,
        vel: &VelocityGrid,
        x: &[Complex64],
        forcing: &mut dyn FnMut(usize) -> Option<Spectral>,
        mut stages: Option<&mut Vec<Spectral>>,
    ) -> Spectral {
        let dt = self.grid().step_dt();
        let mut phi = x.to_vec();
        let mut acc = self.ops.zeros();
        for i in 0..3 {
            let tau = RK_C[i] * dt;
            let mut stage = phi.clone();
            self.ops.decay(&mut stage, tau);
            let mut rhs = self.ops.advect(vel, &stage);
            if let Some(f) = forcing(i) {
                axpy(&mut rhs, 1.0, &f);
            }
            if let Some(s) = stages.as_deref_mut() {
                s.push(stage);
            }
            self.ops.decay(&mut rhs, -tau);
            for (a, r) in acc.iter_mut().zip(&rhs) {
                *a = RK_A[i] * *a + dt * r;
            }
            axpy(&mut phi, RK_B[i], &acc);
        }
        self.ops.decay(&mut phi, dt);
        phi
    }

    fn finite(&self, x: &[Complex64], what: &str, k: usize) -> Result<()> {
        if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("{what} at step {k}")))
        }
    }

    /// Solves from `theta0` (masked to the resolved modes) up to `t_star`.
    pub fn solve_scalar(
        &self,
        vel: &VelocityGrid,
        theta0: &ScalarState,
        forcing: Option<&ScalarState>,
        storage: Storage,
    ) -> Result<Trajectory> {
        self.check_cfl(vel)?;
        let every = match storage {
            Storage::Full => 1,
            Storage::Checkpoint { every } => every.max(1),
        };
        let steps = self.grid().steps();
        let mut x = theta0.coeffs.clone();
        if x.len() != self.ops.len() {
            return Err(Error::DimensionMismatch { expected: self.ops.len(), found: x.len() });
        }
        self.ops.apply_mask(&mut x);
        let f = forcing.map(|f| {
            let mut c = f.coeffs.clone();
            self.ops.apply_mask(&mut c);
            c
        });
        let mut states = Vec::with_capacity(steps + 1);
        states.push(Some(x.clone()));
        for k in 1..=steps {
            x = self.step(vel, &x, &mut |_| f.clone(), None);
            self.finite(&x, "scalar", k)?;
            states.push(if k % every == 0 { Some(x.clone()) } else { None });
        }
        Ok(Trajectory { dt: self.grid().step_dt(), every, states, replay: Some((vel.clone(), f)) })
    }

    /// Stage values of step `k -> k + 1` of a scalar trajectory.
    fn scalar_stages(&self, vel: &VelocityGrid, theta: &Trajectory, x: &Spectral) -> (Spectral, Vec<Spectral>) {
        let forcing = theta.replay.as_ref().and_then(|r| r.1.clone());
        let mut st = Vec::with_capacity(3);
        let next = self.step(vel, x, &mut |_| forcing.clone(), Some(&mut st));
        (next, st)
    }

    /// First variation `psi^xi`, zero at `t = 0`, forced by `-xi . grad theta`.
    pub fn solve_tangent(&self, vel: &VelocityGrid, xi: &VelocityGrid, theta: &Trajectory) -> Result<Trajectory> {
        let steps = theta.steps();
        let mut th = theta.state(self, 0)?;
        let mut psi = self.ops.zeros();
        let mut states = vec![Some(psi.clone())];
        for k in 1..=steps {
            let (next, st) = self.scalar_stages(vel, theta, &th);
            psi = self.step(vel, &psi, &mut |i| Some(self.ops.advect(xi, &st[i])), None);
            self.finite(&psi, "tangent", k)?;
            states.push(Some(psi.clone()));
            th = next;
        }
        Ok(Trajectory { dt: theta.dt, every: 1, states, replay: None })
    }

    /// Second variation `psi^{xi, xi2}`, forced by
    /// `-xi2 . grad psi^xi - xi . grad psi^xi2`.
    pub fn solve_second_variation(
        &self,
        vel: &VelocityGrid,
        xi: &VelocityGrid,
        xi2: &VelocityGrid,
        theta: &Trajectory,
        psi_xi: &Trajectory,
        psi_xi2: &Trajectory,
    ) -> Result<Trajectory> {
        let steps = theta.steps();
        if psi_xi.steps() != steps || psi_xi2.steps() != steps {
            return Err(Error::DimensionMismatch { expected: steps, found: psi_xi.steps().min(psi_xi2.steps()) });
        }
        let mut th = theta.state(self, 0)?;
        let mut out = self.ops.zeros();
        let mut states = vec![Some(out.clone())];
        for k in 1..=steps {
            let (next, st) = self.scalar_stages(vel, theta, &th);
            let mut s1 = Vec::with_capacity(3);
            let mut s2 = Vec::with_capacity(3);
            self.step(vel, &psi_xi.state(self, k - 1)?, &mut |i| Some(self.ops.advect(xi, &st[i])), Some(&mut s1));
            self.step(vel, &psi_xi2.state(self, k - 1)?, &mut |i| Some(self.ops.advect(xi2, &st[i])), Some(&mut s2));
            out = self.step(
                vel,
                &out,
                &mut |i| {
                    let mut f = self.ops.advect(xi2, &s1[i]);
                    axpy(&mut f, 1.0, &self.ops.advect(xi, &s2[i]));
                    Some(f)
                },
                None,
            );
            self.finite(&out, "second variation", k)?;
            states.push(Some(out.clone()));
            th = next;
        }
        Ok(Trajectory { dt: theta.dt, every: 1, states, replay: None })
    }

    /// Gradient of `J(q) = sum_l <seed_l, psi_{step_l}>` over the tangent
    /// directions `dirs`, i.e. `J(psi^{dirs[j]})` for every `j`, from one
    /// backward sweep. Seeds must be Hermitian and masked.
    pub fn adjoint_directional(
        &self,
        vel: &VelocityGrid,
        theta: &Trajectory,
        seeds: &[(usize, Spectral)],
        dirs: &[VelocityGrid],
    ) -> Result<Vec<f64>> {
        let steps = theta.steps();
        let dt = theta.dt;
        let len = self.ops.len();
        let mut lam = self.ops.zeros();
        let add_seeds = |lam: &mut Spectral, k: usize| {
            for (s, seed) in seeds {
                if *s == k {
                    axpy(lam, 1.0, seed);
                }
            }
        };
        add_seeds(&mut lam, steps);
        let mut wx = vec![0.0; len];
        let mut wy = vec![0.0; len];
        let mut block: Option<(usize, Vec<Spectral>)> = None;
        let every = theta.every;
        for n in (0..steps).rev() {
            let start = (n / every) * every;
            if block.as_ref().map(|b| b.0) != Some(start) {
                let end = (start + every).min(steps);
                let mut xs = vec![theta.state(self, start)?];
                for _ in start..end.saturating_sub(1) {
                    let (next, _) = self.scalar_stages(vel, theta, xs.last().expect("non-empty"));
                    xs.push(next);
                }
                block = Some((start, xs));
            }
            let th = &block.as_ref().expect("block set").1[n - start];
            let (_, st) = self.scalar_stages(vel, theta, th);

            let mut phibar = lam.clone();
            self.ops.decay(&mut phibar, dt);
            let mut qbar = self.ops.zeros();
            for i in (0..3).rev() {
                axpy(&mut qbar, RK_B[i], &phibar);
                let mut y = qbar.clone();
                self.ops.decay(&mut y, -RK_C[i] * dt);
                y.iter_mut().for_each(|z| *z *= dt);
                // <y, -P(xi . grad theta_i)> accumulates into W = y grad theta_i.
                let yp = self.ops.inverse(&y);
                let (gx, gy) = self.ops.gradient(&st[i]);
                for x in 0..len {
                    wx[x] += yp[x] * gx[x];
                    wy[x] += yp[x] * gy[x];
                }
                // The advection operator is skew on the resolved modes.
                let mut back = self.ops.advect(vel, &y);
                back.iter_mut().for_each(|z| *z = -*z);
                self.ops.decay(&mut back, RK_C[i] * dt);
                axpy(&mut phibar, 1.0, &back);
                qbar.iter_mut().for_each(|z| *z *= RK_A[i]);
            }
            lam = phibar;
            self.finite(&lam, "adjoint", n)?;
            add_seeds(&mut lam, n);
        }
        let scale = -1.0 / len as f64;
        Ok(dirs.iter().map(|d| scale * (0..len).map(|x| d.u[x] * wx[x] + d.v[x] * wy[x]).sum::<f64>()).collect())
    }

    /// Relative defect of `|theta|^2(t+2h) - |theta|^2(t) + 2 kappa int |grad theta|^2`
    /// over consecutive step pairs, the integral by Simpson's rule.
    pub fn energy_audit(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        let xs = traj.all_states(self)?;
        let h = traj.dt;
        let kappa = self.grid().kappa;
        let e: Vec<f64> = xs.iter().map(|x| self.ops.l2_sq(x)).collect();
        let d: Vec<f64> = xs.iter().map(|x| self.ops.h1_sq(x)).collect();
        Ok((0..xs.len().saturating_sub(2))
            .step_by(2)
            .map(|k| {
                let integral = h / 3.0 * (d[k] + 4.0 * d[k + 1] + d[k + 2]);
                (e[k + 2] - e[k] + 2.0 * kappa * integral).abs() / e[k]
            })
            .collect())
    }

    /// `sup_t max_x |theta(t, x)|` on the collocation grid.
    pub fn sup_norm(&self, traj: &Trajectory) -> Result<f64> {
        Ok(traj
            .all_states(self)?
            .iter()
            .map(|x| self.ops.inverse(x).iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .fold(0.0, f64::max))
    }
}
