//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! a non-zero status if any criterion fails.
//!
//! Set `ACCEPTANCE_ONLY=3,7` to run a subset.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use hhmc::adr::*;
use hhmc::coupling::{coupled_ensemble, log_linear_slope, DistanceSpec};
use hhmc::kernel::{fd_time_bound, t_max_basic, FdConstants, StepRecord};
use hhmc::lyapunov::{default_eta, quadratic_pnv};
use hhmc::potential::{DiagonalQuadratic, Gaussian, LogCosh};
use hhmc::rng::{stream, tag};
use hhmc::stats::{integrated_autocorrelation, ks_test_normal};
use hhmc::*;
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};

type Outcome = std::result::Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn power_spec(dim: usize) -> CovarianceSpectrum {
    CovarianceSpectrum::power_law(1.0, 2.0, dim, 0.0).unwrap()
}

fn normal_field(dim: usize, scale: f64, rng: &mut SimRng) -> Field {
    Field::from_vec_unchecked(
        (0..dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            })
            .collect(),
    )
}

// 1 -------------------------------------------------------------------------

fn linear_flow_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut rng = stream(11, tag::PROBE, 0);
    for &d in &[1usize, 64, 1024] {
        let spec = power_spec(d);
        let pot = Gaussian::new(d);
        let q = spec.sample_gaussian(&mut rng);
        let v = spec.sample_gaussian(&mut rng);
        let p0 = PhasePoint::new(q.clone(), v.clone()).map_err(err)?;
        for &t in &[0.1f64, 0.5, 1.0] {
            let (c, s) = (t.cos(), t.sin());
            let q_ref: Vec<f64> = q.coeffs().iter().zip(v.coeffs()).map(|(a, b)| c * a + s * b).collect();
            let v_ref: Vec<f64> = q.coeffs().iter().zip(v.coeffs()).map(|(a, b)| -s * a + c * b).collect();
            for absorb in [true, false] {
                let mut cfg = FlowConfig::new(t);
                cfg.absorb_linear = absorb;
                let out = flow(&spec, &pot, &p0, &cfg).map_err(err)?;
                let eq = out.q.coeffs().iter().zip(&q_ref).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let ev = out.v.coeffs().iter().zip(&v_ref).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                worst = worst.max(eq).max(ev);
            }
        }
    }
    ensure(worst <= 1e-9, format!("max |.|_0 error {worst:.2e} (tol 1e-9)"))
}

// 2 -------------------------------------------------------------------------

fn variance_check(
    spec: &CovarianceSpectrum,
    pot: &DiagonalQuadratic,
    t: f64,
    seed: u64,
) -> std::result::Result<f64, String> {
    let d = spec.dim();
    let cfg = FlowConfig::new(t);
    let burn = run_chain(spec, pot, &Field::zeros(d), 1_000, &cfg, seed, 0, &RunOptions::default()).map_err(err)?;
    let tr = run_chain(spec, pot, &burn.final_state.q, 100_000, &cfg, seed, 1, &RunOptions::default()).map_err(err)?;
    let mut worst_z: f64 = 0.0;
    for i in 0..d {
        let xs = tr.coordinate(i);
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let sq: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
        let var = sq.iter().sum::<f64>() / n;
        let est = clt_sigma(&sq, CltMethod::BatchMeans).map_err(err)?;
        let se = (est.sigma2_hat / n).sqrt();
        let target = pot.target_variance(spec, i);
        let z = (var - target).abs() / se;
        worst_z = worst_z.max(z);
    }
    Ok(worst_z)
}

fn quadratic_invariance() -> Outcome {
    let s1 = CovarianceSpectrum::new(vec![1.0], 0.0).map_err(err)?;
    let p1 = DiagonalQuadratic::uniform(&s1, 1.0).map_err(err)?;
    let z1 = variance_check(&s1, &p1, 1.0, 21)?;
    let s64 = power_spec(64);
    let b: Vec<f64> = (0..64).map(|j| 0.5 + (j % 3) as f64).collect();
    let p64 = DiagonalQuadratic::new(&s64, b).map_err(err)?;
    let z64 = variance_check(&s64, &p64, 1.0, 22)?;
    ensure(z1 <= 5.0 && z64 <= 5.0, format!("max |var - lambda/(1+lambda b)| / se: D=1 {z1:.2}, D=64 {z64:.2} (tol 5)"))
}

// 3 -------------------------------------------------------------------------

fn pathwise_contraction() -> Outcome {
    let spec = power_spec(16);
    let pot = DiagonalQuadratic::uniform(&spec, 2.0).map_err(err)?;
    let t = 0.4;
    let budget = admissible_times(&spec, &pot).map_err(err)?;
    if t > budget.t_max_contraction {
        return Err(format!("T = {t} exceeds the contraction bound {}", budget.t_max_contraction));
    }
    let setup = CouplingSetup::from_constants(&spec, &pot, ShiftVariant::Linear).map_err(err)?;
    let coupler = Coupler::new(&spec, &pot, FlowConfig::new(t), setup).map_err(err)?;
    let kappa1 = 1.0 - t * t / 12.0;
    let (pairs, steps) = (100, 100);
    let mut worst: f64 = 0.0;
    let mut violations = 0;
    let mut checked = 0;
    for r in 0..pairs {
        let mut rng = stream(31, tag::COUPLING, r);
        let q0 = spec.sample_gaussian(&mut rng).scaled(3.0);
        let q1 = spec.sample_gaussian(&mut rng).scaled(3.0);
        let mut pair = (ChainState::new(q0), ChainState::new(q1));
        let mut prev = spec.alpha_norm(0.0, setup.n_cut, setup.alpha, &pair.0.q.sub(&pair.1.q)).map_err(err)?;
        for _ in 0..steps {
            let (next, e) = coupler.step(&pair, &mut rng).map_err(err)?;
            pair = next;
            if prev > 1e-200 {
                let ratio = e.dist_alpha / prev;
                worst = worst.max(ratio);
                if ratio > kappa1 {
                    violations += 1;
                }
                checked += 1;
            }
            prev = e.dist_alpha;
        }
    }
    ensure(
        violations == 0,
        format!(
            "N = {}, alpha = {}, {checked} steps, max ratio {worst:.4} vs 1 - T^2/12 = {kappa1:.4}, {violations} violations",
            setup.n_cut, setup.alpha
        ),
    )
}

// 4 -------------------------------------------------------------------------

/// `KL(N(m, S1) || N(0, S0))` for diagonal covariances, from the general
/// Gaussian formula.
fn gaussian_kl(s1: &[f64], s0: &[f64], m: &[f64]) -> f64 {
    let k = s0.len() as f64;
    let trace: f64 = s1.iter().zip(s0).map(|(a, b)| a / b).sum();
    let quad: f64 = m.iter().zip(s0).map(|(x, l)| x * x / l).sum();
    let logdet: f64 = s1.iter().zip(s0).map(|(a, b)| (b / a).ln()).sum();
    0.5 * (trace - k + quad + logdet)
}

fn girsanov_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    for (d, seed) in [(1usize, 41u64), (16, 42)] {
        let spec = power_spec(d);
        let pot = DiagonalQuadratic::uniform(&spec, 1.0).map_err(err)?;
        let setup = CouplingSetup { n_cut: d.min(4), variant: ShiftVariant::Linear, alpha: 8.0 };
        let coupler = Coupler::new(&spec, &pot, FlowConfig::new(0.3), setup).map_err(err)?;
        let mut rng = stream(seed, tag::COUPLING, 0);
        let q0 = spec.sample_gaussian(&mut rng).scaled(2.0);
        let (_, trace) = coupler.run(&q0, &Field::zeros(d), 40, &mut rng).map_err(err)?;
        let module = hhmc::coupling::girsanov_kl(&spec, &trace).map_err(err)?;
        let oracle: f64 =
            trace.entries.iter().map(|e| gaussian_kl(spec.eigenvalues(), spec.eigenvalues(), e.shift.coeffs())).sum();
        let rel = (module - oracle).abs() / oracle;
        worst = worst.max(rel);
    }
    ensure(worst <= 1e-12, format!("max relative KL mismatch {worst:.2e} (tol 1e-12)"))
}

// 5 -------------------------------------------------------------------------

fn lyapunov_drift() -> Outcome {
    let spec = power_spec(16);
    let pot = DiagonalQuadratic::uniform(&spec, 0.5).map_err(err)?;
    let c = pot.constants().expect("quadratic constants");
    let t = 0.9 * t_max_basic(&spec, c.l1, c.l2);
    let cfg = FlowConfig::new(t);
    let poly = LyapunovKind::Poly { i: 2 };
    let dc = drift_constants(&spec, &pot, poly, &cfg, &SearchOptions::default()).map_err(err)?;
    let kappa = (-c.l2 * t * t / 16.0).exp();
    let mut rng = stream(51, tag::PROBE, 0);
    let mut violations = 0;
    let mut worst_margin = f64::INFINITY;
    for _ in 0..10 {
        let u = spec.sample_gaussian(&mut rng);
        let u = u.scaled(1.0 / u.norm());
        for k in 0..10 {
            let r = 10f64.powf(-2.0 + 4.0 * k as f64 / 9.0);
            let q0 = u.scaled(r);
            let v0 = poly.eval(&spec, &q0).map_err(err)?;
            for n in 1..=20u32 {
                let pnv = quadratic_pnv(&spec, &pot, poly, &q0, t, n).map_err(err)?;
                let bound = kappa.powi(n as i32) * v0 + dc.k_v;
                worst_margin = worst_margin.min(bound - pnv);
                if pnv > bound {
                    violations += 1;
                }
            }
        }
    }
    // At the default eta, K_V = R^{32/(L2 T^2)} overflows; a quarter of it
    // keeps the bound finite.
    let eta = 0.25 * default_eta(&spec, c.l2, t);
    let exp_kind = LyapunovKind::Exp { eta };
    let de = drift_constants(&spec, &pot, exp_kind, &cfg, &SearchOptions::default()).map_err(err)?;
    let starts = vec![Field::zeros(16), spec.sample_gaussian(&mut rng), spec.sample_gaussian(&mut rng).scaled(3.0)];
    let mc = drift_verify(&spec, &pot, &de, &starts, &cfg, 5, 10_000, 52);
    let mc_detail = match &mc {
        Ok(rep) => format!(
            "V_2,eta (eta = {eta:.3e}, K_V = {:.3e}) MC over {} rows passes at 3 se, largest estimate {:.4}",
            de.k_v,
            rep.rows.len(),
            rep.rows.iter().map(|r| r.estimate).fold(0.0, f64::max)
        ),
        Err(e) => format!("V_2,eta MC failed: {e}"),
    };
    ensure(
        violations == 0 && mc.is_ok() && (dc.kappa_v - kappa).abs() < 1e-15,
        format!(
            "V_1,2: 100 starts x n <= 20, {violations} violations, min margin {worst_margin:.3e}, K_V = {:.4}; {mc_detail}",
            dc.k_v
        ),
    )
}

// 6 -------------------------------------------------------------------------

fn weak_harris() -> Outcome {
    let spec = power_spec(8);
    let pot = DiagonalQuadratic::uniform(&spec, 1e-12).map_err(err)?;
    let c = pot.constants().expect("quadratic constants");
    let t = 0.9 * t_max_basic(&spec, c.l1, c.l2);
    let v = LyapunovKind::Poly { i: 2 };
    let h = harris_constants(&spec, &pot, t, v).map_err(err)?;
    let stiff = DiagonalQuadratic::uniform(&spec, 0.5).map_err(err)?;
    let sc = stiff.constants().expect("quadratic constants");
    let stiff_result = match harris_constants(&spec, &stiff, 0.9 * t_max_basic(&spec, sc.l1, sc.l2), v) {
        Err(Error::NoSpectralGap { .. }) => "b = 0.5 gives no certified gap",
        Err(_) => "b = 0.5 fails unexpectedly",
        Ok(_) => "b = 0.5 certifies a gap",
    };
    let n0 = h.n0 as usize;
    // Synchronous chains of this model contract by roughly e^-90 before n0,
    // so a start pair of order one coalesces in floating point long before
    // the fit window. A symmetric pair at 1e30 keeps the difference
    // representable (and rho unsaturated) over [n0, n0 + 20].
    let mut rng = stream(61, tag::PROBE, 0);
    let u = spec.sample_gaussian(&mut rng);
    let q0 = u.scaled(1e30 / u.norm());
    let q1 = q0.scaled(-1.0);
    let setup = CouplingSetup { n_cut: h.n_cut, variant: ShiftVariant::Synchronous, alpha: h.alpha };
    let dist = DistanceSpec { epsilon: h.epsilon, gamma: spec.gamma(), lyapunov: v };
    let stats =
        coupled_ensemble(&spec, &pot, &q0, &q1, &FlowConfig::new(t), setup, &dist, n0 + 21, 200, 62).map_err(err)?;
    let window = &stats[n0 - 1..n0 + 20];
    let ns: Vec<f64> = window.iter().map(|s| s.n as f64).collect();
    let ys: Vec<f64> = window.iter().map(|s| s.mean_rho_tilde).collect();
    let (slope, se) = log_linear_slope(&ns, &ys).map_err(err)?;
    ensure(
        h.c2 > 0.0 && slope <= -h.c2 + se,
        format!(
            "C2 = {:.3e}, C1 = {:.3e}, n0 = {n0}, eps = {:.3e}, mean rho at n0 {:.2e}; fitted slope {slope:.3e} +- {se:.1e} over [n0, n0+20]; {stiff_result}",
            h.c2, h.c1, h.epsilon, window[0].mean_rho
        ),
    )
}

// 7 -------------------------------------------------------------------------

fn clt() -> Outcome {
    let spec = CovarianceSpectrum::new(vec![1.0], 0.0).map_err(err)?;
    let pot = Gaussian::new(1);
    let cfg = FlowConfig::new(1.0);
    let c1 = 1f64.cos();
    let sigma2 = (1.0 + c1) / (1.0 - c1);
    let tr = run_chain(&spec, &pot, &Field::zeros(1), 1_000_000, &cfg, 71, 0, &RunOptions::default()).map_err(err)?;
    let xs = tr.coordinate(0);
    let bm = clt_sigma(&xs, CltMethod::BatchMeans).map_err(err)?;
    let ac = clt_sigma(&xs, CltMethod::AutocovSum).map_err(err)?;
    let rel_bm = (bm.sigma2_hat - sigma2).abs() / sigma2;
    let rel_ac = (ac.sigma2_hat - sigma2).abs() / sigma2;

    let n = 100_000;
    let kernel = HmcKernel::new(&spec, &pot, cfg).map_err(err)?;
    let mut zs = Vec::with_capacity(200);
    for seed in 0..200u64 {
        let mut rng = stream(7_000 + seed, tag::CHAIN, 0);
        let mut st = ChainState::new(Field::zeros(1));
        let mut sum = 0.0;
        for _ in 0..n {
            st = kernel.step(&st, &mut rng).map_err(err)?.0;
            sum += st.q.coeffs()[0];
        }
        zs.push(sum / (n as f64).sqrt() / sigma2.sqrt());
    }
    let ks = ks_test_normal(&zs).map_err(err)?;
    ensure(
        rel_bm <= 0.1 && rel_ac <= 0.1 && ks.p_value > 0.01,
        format!(
            "sigma^2 = {sigma2:.5}; batch means {:.4} ({:.1}%), autocov {:.4} ({:.1}%); KS over 200 seeds D = {:.4}, p = {:.3}",
            bm.sigma2_hat,
            100.0 * rel_bm,
            ac.sigma2_hat,
            100.0 * rel_ac,
            ks.statistic,
            ks.p_value
        ),
    )
}

// 8 -------------------------------------------------------------------------

fn fd_equivalence() -> Outcome {
    let d = 16;
    let spec = power_spec(d);
    let w: Vec<f64> = (0..d).map(|j| 1.0 / (1.0 + j as f64)).collect();
    let pot = LogCosh::new(&spec, w).map_err(err)?;
    let cfg = FlowConfig::new(0.5).with_substeps(32);
    let pre = HmcKernel::new(&spec, &pot, cfg.clone()).map_err(err)?;
    let fd = FdKernel::new(&MassMatrix::inverse_of(&spec), &spec, &pot, cfg, TimeCheck::Exploratory).map_err(err)?;
    let mut ra = stream(81, tag::CHAIN, 0);
    let mut rb = stream(81, tag::CHAIN, 0);
    let mut a = ChainState::new(spec.sample_gaussian(&mut stream(81, tag::PROBE, 0)));
    let mut b = a.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (na, ea): (ChainState, StepRecord) = pre.step(&a, &mut ra).map_err(err)?;
        let (nb, eb) = fd.step(&b, &mut rb).map_err(err)?;
        if ea.noise != eb.noise {
            return Err("kernels drew different noise".into());
        }
        worst = worst.max(na.q.max_abs_diff(&nb.q));
        a = na;
        b = nb;
    }

    println!("    dimension sweep, U = 0, lambda_j = j^-2, coordinate 1, 20000 steps");
    println!("    {:>5} {:>6} {:>11} {:>12} {:>12} {:>9}", "D", "M", "T", "IAT est", "IAT exact", "resolved");
    let gauss_consts = FdConstants { l1: 0.0, l2: 1.0 };
    let steps = 20_000;
    let mut rows = 0;
    let mut pre_ok = true;
    for &dim in &[4usize, 16, 64, 256] {
        let spec = power_spec(dim);
        let pot = Gaussian::new(dim);
        for (label, mass) in [("I", MassMatrix::identity(dim)), ("C^-1", MassMatrix::inverse_of(&spec))] {
            let t = if label == "I" { fd_time_bound(&mass, &spec, gauss_consts) } else { t_max_basic(&spec, 0.0, 1.0) };
            let k = FdKernel::new(&mass, &spec, &pot, FlowConfig::new(t), TimeCheck::Exploratory).map_err(err)?;
            let mut rng = stream(82, tag::CHAIN, dim as u64);
            let mut st = ChainState::new(Field::zeros(dim));
            let mut xs = Vec::with_capacity(steps);
            for _ in 0..steps {
                st = k.step(&st, &mut rng).map_err(err)?.0;
                xs.push(st.q.coeffs()[0]);
            }
            let est = integrated_autocorrelation(&xs).map_err(err)?;
            // Coordinate 1 has unit frequency for both mass matrices.
            let c = t.cos();
            let exact = (1.0 + c) / (1.0 - c);
            let resolved = (steps as f64) >= 50.0 * exact;
            if label == "C^-1" && (est - exact).abs() > 0.25 * exact {
                pre_ok = false;
            }
            println!(
                "    {dim:>5} {label:>6} {t:>11.4e} {est:>12.2} {exact:>12.3e} {:>9}",
                if resolved { "yes" } else { "no" }
            );
            rows += 1;
        }
    }
    ensure(
        worst <= 1e-9 && rows == 8 && pre_ok,
        format!(
            "M = C^-1 vs preconditioned kernel over 200 steps: max diff {worst:.2e} (tol 1e-9); sweep table emitted"
        ),
    )
}

// 9 -------------------------------------------------------------------------

fn adr_physics() -> Outcome {
    let kappa = 0.02;
    let solver = AdrSolver::new(TorusGrid::new(64, kappa, 2e-3, 0.5).map_err(err)?).map_err(err)?;
    let ops = solver.ops();
    let zero = VelocityGrid::zeros(ops.len());

    let heat0 = ScalarState::from_fn(ops, |x, y| (x + 2.0 * y).cos() + 0.5 * (3.0 * y).sin());
    let heat = solver.solve_scalar(&zero, &heat0, None, Storage::Full).map_err(err)?;
    let t_end = heat.steps() as f64 * heat.dt();
    let expect = ScalarState::from_fn(ops, |x, y| {
        (-kappa * 5.0 * t_end).exp() * (x + 2.0 * y).cos() + 0.5 * (-kappa * 9.0 * t_end).exp() * (3.0 * y).sin()
    });
    let got = ScalarState { coeffs: heat.state(&solver, heat.steps()).map_err(err)? }.to_physical(ops);
    let heat_err = got.iter().zip(expect.to_physical(ops)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let basis = DivFreeBasis::new(32).map_err(err)?;
    let (prior, _) = prior_spectrum_torus(PriorDecay::Power { p: 3.0 }, 32, 0.0).map_err(err)?;
    let q = prior.sample_gaussian(&mut stream(91, tag::DATA_TRUTH, 0));
    let vel = basis.velocity(ops, &q).map_err(err)?;
    let theta0 = ScalarState::from_fn(ops, |x, y| 1.5 + x.sin() * y.cos() + 0.3 * (2.0 * x - y).cos());
    let tr = solver.solve_scalar(&vel, &theta0, None, Storage::Full).map_err(err)?;
    let energy = solver.energy_audit(&tr).map_err(err)?.into_iter().fold(0.0, f64::max);
    let sup0 = theta0.to_physical(ops).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sup = solver.sup_norm(&tr).map_err(err)?;
    let m0 = theta0.mean();
    let mean_drift = tr
        .all_states(&solver)
        .map_err(err)?
        .into_iter()
        .map(|c| (ScalarState { coeffs: c }.mean() - m0).abs())
        .fold(0.0, f64::max);
    ensure(
        heat_err <= 1e-8 && energy <= 1e-8 && sup <= sup0 + 1e-6 && mean_drift <= 1e-12,
        format!(
            "64^2 grid: heat error {heat_err:.2e}, energy defect {energy:.2e}, sup {sup:.6} vs initial {sup0:.6}, mean drift {mean_drift:.1e}, max speed {:.3}",
            vel.max_speed()
        ),
    )
}

// 10 ------------------------------------------------------------------------

fn derivative_setup(gamma_obs: f64) -> AdrSetup {
    let modes = vec![(1, 0), (0, 1), (1, 1), (1, -1), (2, 0), (0, 2), (2, 1), (1, 2), (2, -1), (1, -2)];
    AdrSetup {
        grid: TorusGrid::new(32, 0.05, 0.05, 1.0).unwrap(),
        basis_dim: 32,
        theta0: InitialCondition {
            terms: vec![
                FourierTerm { k: (1, 0), cos: 1.0, sin: 0.0 },
                FourierTerm { k: (0, 1), cos: 0.0, sin: 1.0 },
                FourierTerm { k: (1, 1), cos: 0.5, sin: 0.5 },
                FourierTerm { k: (2, -1), cos: 0.3, sin: 0.0 },
            ],
        },
        observations: ObservationSpec::with_uniform_noise(
            vec![ObservationKind::Spectral { modes, times: vec![0.25, 0.5, 0.75, 1.0] }],
            gamma_obs,
        )
        .unwrap(),
        storage: Storage::Full,
    }
}

fn theta_distance(ops: &SpectralOps, a: &[Complex64], b: &[Complex64]) -> f64 {
    let diff: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    ops.l2_sq(&diff).sqrt()
}

fn fit_slope(hs: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn adr_derivatives() -> Outcome {
    let setup = derivative_setup(1e-2);
    let base = AdrProblem::new(setup.clone(), vec![0.0; setup.observations.m()]).map_err(err)?;
    let mut rng = stream(101, tag::PROBE, 0);
    let y = base.observations(&normal_field(32, 0.3, &mut rng)).map_err(err)?;
    let p = base.with_data(y).map_err(err)?;
    let solver = p.solver();
    let ops = solver.ops();
    let q = normal_field(32, 0.2, &mut rng);
    let xi = normal_field(32, 0.2, &mut rng);

    let (vel, tr) = p.solve(&q).map_err(err)?;
    let dir = p.direction(&xi).map_err(err)?;
    let psi = solver.solve_tangent(&vel, &dir, &tr).map_err(err)?;
    let psi2 = solver.solve_second_variation(&vel, &dir, &dir, &tr, &psi, &psi).map_err(err)?;
    let last = tr.steps();
    let th = tr.state(solver, last).map_err(err)?;
    let d1 = psi.state(solver, last).map_err(err)?;
    let d2 = psi2.state(solver, last).map_err(err)?;
    let hs = [0.2, 0.1, 0.05, 0.025];
    let mut first = Vec::new();
    let mut second = Vec::new();
    for &h in &hs {
        let (_, th_h) = p.solve(&q.add(&xi.scaled(h))).map_err(err)?;
        let th_h = th_h.state(solver, last).map_err(err)?;
        let lin: Vec<_> = th.iter().zip(&d1).map(|(a, b)| a + b * h).collect();
        let quad: Vec<_> = lin.iter().zip(&d2).map(|(a, b)| a + b * (0.5 * h * h)).collect();
        first.push(theta_distance(ops, &th_h, &lin));
        second.push(theta_distance(ops, &th_h, &quad));
    }
    let s1 = fit_slope(&hs, &first);
    let s2 = fit_slope(&hs, &second);

    let ga = p.grad_adjoint(&q).map_err(err)?;
    let gt = p.grad_tangent(&q).map_err(err)?;
    let adj_rel = ga.sub(&gt).norm() / gt.norm();

    let mut fd_rel: f64 = 0.0;
    let h = 1e-5;
    for _ in 0..3 {
        let e = normal_field(32, 1.0, &mut rng);
        let e = e.scaled(1.0 / e.norm());
        let up = p.value(&q.add(&e.scaled(h))).map_err(err)?;
        let dn = p.value(&q.sub(&e.scaled(h))).map_err(err)?;
        let fd = (up - dn) / (2.0 * h);
        let an = ga.dot(&e);
        fd_rel = fd_rel.max((fd - an).abs() / ga.norm());
    }
    ensure(
        (1.9..=2.1).contains(&s1) && (2.8..=3.2).contains(&s2) && adj_rel <= 1e-8 && fd_rel <= 1e-5,
        format!(
            "tangent slope {s1:.3}, second-variation slope {s2:.3}, adjoint vs tangent {adj_rel:.2e}, FD {fd_rel:.2e}"
        ),
    )
}

// 11 ------------------------------------------------------------------------

fn adr_end_to_end() -> Outcome {
    let setup = derivative_setup(1e-5);
    let (prior, _) = prior_spectrum_torus(PriorDecay::Power { p: 3.0 }, 32, 0.0).map_err(err)?;
    let q_true = prior.sample_gaussian(&mut stream(7, tag::DATA_TRUTH, 0));
    let base = AdrProblem::new(setup.clone(), vec![0.0; setup.observations.m()]).map_err(err)?;
    let y = base.synthesize(&q_true, false, &mut stream(7, tag::DATA_NOISE, 0)).map_err(err)?;
    let p = base.with_data(y).map_err(err)?;
    let u0 = p.value(&Field::zeros(32)).map_err(err)?;
    let kernel = HmcKernel::new(&prior, &p, FlowConfig::new(0.5).with_substeps(20)).map_err(err)?;
    let mut rng = stream(7, tag::CHAIN, 0);
    let mut st = ChainState::new(Field::zeros(32));
    let mut reached = None;
    let mut u = u0;
    for i in 1..=10_000 {
        st = kernel.step(&st, &mut rng).map_err(err)?.0;
        u = p.value(&st.q).map_err(err)?;
        if u <= 1e-2 * u0 {
            reached = Some(i);
            break;
        }
    }
    let dist = st.q.sub(&q_true).norm() / q_true.norm();
    match reached {
        Some(i) => Ok(format!(
            "U(0) = {u0:.4e}, U <= 1e-2 U(0) after {i} steps (U = {u:.3e}), relative distance to truth {dist:.3}"
        )),
        None => Err(format!("U(0) = {u0:.4e}, U = {u:.4e} after 10^4 steps")),
    }
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "linear-flow exactness", budget: Duration::from_secs(1), run: linear_flow_exactness },
        Criterion {
            id: 2,
            name: "quadratic-target invariance",
            budget: Duration::from_secs(30),
            run: quadratic_invariance,
        },
        Criterion { id: 3, name: "pathwise contraction", budget: Duration::from_secs(30), run: pathwise_contraction },
        Criterion { id: 4, name: "Girsanov KL identity", budget: Duration::from_secs(1), run: girsanov_identity },
        Criterion { id: 5, name: "Lyapunov drift", budget: Duration::from_secs(60), run: lyapunov_drift },
        Criterion { id: 6, name: "weak-Harris assembly", budget: Duration::from_secs(300), run: weak_harris },
        Criterion { id: 7, name: "CLT", budget: Duration::from_secs(600), run: clt },
        Criterion { id: 8, name: "mass-matrix equivalence", budget: Duration::from_secs(600), run: fd_equivalence },
        Criterion { id: 9, name: "ADR solver physics", budget: Duration::from_secs(60), run: adr_physics },
        Criterion { id: 10, name: "ADR derivatives", budget: Duration::from_secs(300), run: adr_derivatives },
        Criterion { id: 11, name: "ADR end to end", budget: Duration::from_secs(900), run: adr_end_to_end },
    ];
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for c in &criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&c.id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = (c.run)();
        let took = start.elapsed();
        let slow = took > c.budget;
        let (tag, detail) = match outcome {
            Ok(d) if !slow => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; over the {:?} runtime budget", c.budget)),
            Err(d) => ("FAIL", d),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("criterion {:>2} {tag} [{:.1?}] {}: {detail}", c.id, took, c.name);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
