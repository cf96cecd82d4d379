use hhmc::adr::grid::inner;
use hhmc::adr::{DivFreeBasis, SpectralOps, TorusGrid};
use hhmc::coupling::girsanov_kl;
use hhmc::io::{read_checkpoint, write_checkpoint};
use hhmc::potential::LogCosh;
use hhmc::rng::{stream, tag};
use hhmc::stats::running_mean;
use hhmc::*;
use proptest::prelude::*;
use rand::RngCore;

fn spec(dim: usize, gamma: f64) -> CovarianceSpectrum {
    CovarianceSpectrum::power_law(1.0, 2.0, dim, gamma).unwrap()
}

fn field(v: Vec<f64>) -> Field {
    Field::new(v).unwrap()
}

fn vecs(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-10.0..10.0f64, dim)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alpha_norm_is_a_norm(a in vecs(12), b in vecs(12), s in -5.0..5.0f64, n in 1usize..12, alpha in 0.5..20.0f64) {
        let sp = spec(12, 0.2);
        let (fa, fb) = (field(a), field(b));
        let na = sp.alpha_norm(0.2, n, alpha, &fa).unwrap();
        let nb = sp.alpha_norm(0.2, n, alpha, &fb).unwrap();
        let nab = sp.alpha_norm(0.2, n, alpha, &fa.add(&fb)).unwrap();
        prop_assert!(nab <= na + nb + 1e-9 * (na + nb));
        let ns = sp.alpha_norm(0.2, n, alpha, &fa.scaled(s)).unwrap();
        prop_assert!((ns - s.abs() * na).abs() <= 1e-10 * (1.0 + na));
    }

    #[test]
    fn projections_split_the_field(a in vecs(9), n in 1usize..9) {
        let f = field(a);
        let lo = project(&f, n, Part::Low).unwrap();
        let hi = project(&f, n, Part::High).unwrap();
        prop_assert_eq!(lo.add(&hi), f);
        prop_assert_eq!(lo.dot(&hi), 0.0);
    }

    #[test]
    fn gamma_zero_norm_is_euclidean(a in vecs(7)) {
        let f = field(a);
        let n = spec(7, 0.0).gamma_norm(0.0, &f).unwrap();
        prop_assert!((n - f.norm()).abs() <= 1e-12 * (1.0 + n));
    }

    #[test]
    fn flow_is_reversible(q in vecs(6), v in vecs(6), t in 0.05..1.0f64) {
        let sp = spec(6, 0.0);
        let pot = LogCosh::new(&sp, vec![1.0, 0.5, 2.0, 0.1, 1.0, 0.3]).unwrap();
        let cfg = FlowConfig::new(t).with_substeps(40);
        let p0 = PhasePoint::new(field(q), field(v)).unwrap();
        let p1 = flow(&sp, &pot, &p0, &cfg).unwrap();
        let back = flow(&sp, &pot, &PhasePoint::new(p1.q.clone(), p1.v.scaled(-1.0)).unwrap(), &cfg).unwrap();
        prop_assert!(back.q.max_abs_diff(&p0.q) < 1e-9);
        prop_assert!(back.v.scaled(-1.0).max_abs_diff(&p0.v) < 1e-9);
    }

    #[test]
    fn adaptive_flow_conserves_energy(q in vecs(5), v in vecs(5), t in 0.1..1.5f64) {
        let sp = spec(5, 0.0);
        let pot = LogCosh::new(&sp, vec![2.0, 1.0, 0.5, 0.25, 0.125]).unwrap();
        let p0 = PhasePoint::new(field(q), field(v)).unwrap();
        let p1 = flow(&sp, &pot, &p0, &FlowConfig::new(t).with_tol(1e-8)).unwrap();
        let h0 = hamiltonian(&sp, &pot, &p0, 5).unwrap();
        let h1 = hamiltonian(&sp, &pot, &p1, 5).unwrap();
        prop_assert!((h1 - h0).abs() <= 1e-5 * (1.0 + h0.abs()), "{h0} -> {h1}");
    }

    #[test]
    fn kl_is_additive_over_concatenation(seed in 0u64..1000, n1 in 1usize..15, n2 in 1usize..15) {
        let sp = spec(8, 0.0);
        let pot = DiagonalQuadratic::uniform(&sp, 1.0).unwrap();
        let setup = CouplingSetup { n_cut: 3, variant: ShiftVariant::Linear, alpha: 8.0 };
        let c = Coupler::new(&sp, &pot, FlowConfig::new(0.4), setup).unwrap();
        let mut rng = stream(seed, tag::COUPLING, 0);
        let q0 = sp.sample_gaussian(&mut rng);
        let ((a, b), t1) = c.run(&q0, &Field::zeros(8), n1, &mut rng).unwrap();
        let (_, t2) = c.run(&a, &b, n2, &mut rng).unwrap();
        let (k1, k2) = (girsanov_kl(&sp, &t1).unwrap(), girsanov_kl(&sp, &t2).unwrap());
        let joint = girsanov_kl(&sp, &t1.concat(t2)).unwrap();
        prop_assert!((joint - k1 - k2).abs() <= 1e-12 * (1.0 + joint));
    }

    #[test]
    fn checkpoints_round_trip(rows in proptest::collection::vec(vecs(4), 1..6)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let states: Vec<Field> = rows.into_iter().map(field).collect();
        write_checkpoint(&path, &states).unwrap();
        prop_assert_eq!(read_checkpoint(&path).unwrap(), states);
    }

    #[test]
    fn running_mean_ends_at_the_mean(xs in proptest::collection::vec(-1e3..1e3f64, 1..50)) {
        let m = running_mean(&xs);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        prop_assert!((m[m.len() - 1] - mean).abs() <= 1e-9 * (1.0 + mean.abs()));
    }

    #[test]
    fn advection_is_skew(coeffs in vecs(10), seed in 0u64..100) {
        let ops = SpectralOps::new(TorusGrid::new(32, 0.1, 0.01, 0.1).unwrap()).unwrap();
        let basis = DivFreeBasis::new(10).unwrap();
        let vel = basis.velocity(&ops, &field(coeffs)).unwrap();
        let mut rng = stream(seed, tag::PROBE, 0);
        let phys: Vec<f64> = (0..ops.len()).map(|_| (rng.next_u32() as f64 / u32::MAX as f64) - 0.5).collect();
        let mut f = ops.forward(&phys);
        ops.apply_mask(&mut f);
        let a = ops.advect(&vel, &f);
        let scale = ops.l2_sq(&f) * (1.0 + vel.max_speed());
        prop_assert!(inner(&f, &a).abs() <= 1e-12 * scale);
    }
}

#[test]
fn streams_are_reproducible_and_independent() {
    let mut a = stream(5, tag::CHAIN, 0);
    let mut b = stream(5, tag::CHAIN, 0);
    let mut c = stream(5, tag::CHAIN, 1);
    let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
    let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
    let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
    assert_eq!(xa, xb);
    assert_ne!(xa, xc);
}

#[test]
fn chains_do_not_depend_on_their_siblings() {
    let sp = spec(4, 0.0);
    let pot = Gaussian::new(4);
    let cfg = FlowConfig::new(0.7);
    let solo = run_chain(&sp, &pot, &Field::zeros(4), 20, &cfg, 9, 3, &RunOptions::default()).unwrap();
    for k in 0..3 {
        run_chain(&sp, &pot, &Field::zeros(4), 20, &cfg, 9, k, &RunOptions::default()).unwrap();
    }
    let again = run_chain(&sp, &pot, &Field::zeros(4), 20, &cfg, 9, 3, &RunOptions::default()).unwrap();
    assert_eq!(solo.states, again.states);
}
