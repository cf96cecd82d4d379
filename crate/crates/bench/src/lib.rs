//! Fixtures shared by the benchmarks.

use hhmc::adr::{prior_spectrum_torus, PriorDecay};
use hhmc::adr::{AdrProblem, AdrSetup, FourierTerm, InitialCondition, ObservationKind, ObservationSpec, TorusGrid};
use hhmc::rng::{stream, tag};
use hhmc::{CovarianceSpectrum, Field};

pub fn power_spectrum(dim: usize) -> CovarianceSpectrum {
    CovarianceSpectrum::power_law(1.0, 2.0, dim, 0.0).expect("valid spectrum")
}

/// `n x n` grid, `dim` velocity modes, ten spectral observations at four
/// times, data generated from a prior draw without noise.
pub fn adr_problem(n: usize, dim: usize) -> (AdrProblem, CovarianceSpectrum) {
    let modes = vec![(1, 0), (0, 1), (1, 1), (1, -1), (2, 0), (0, 2), (2, 1), (1, 2), (2, -1), (1, -2)];
    let setup = AdrSetup {
        grid: TorusGrid::new(n, 0.05, 0.05, 1.0).expect("valid grid"),
        basis_dim: dim,
        theta0: InitialCondition {
            terms: vec![
                FourierTerm { k: (1, 0), cos: 1.0, sin: 0.0 },
                FourierTerm { k: (0, 1), cos: 0.0, sin: 1.0 },
                FourierTerm { k: (1, 1), cos: 0.5, sin: 0.2 },
            ],
        },
        observations: ObservationSpec::with_uniform_noise(
            vec![ObservationKind::Spectral { modes, times: vec![0.25, 0.5, 0.75, 1.0] }],
            1e-4,
        )
        .expect("valid observations"),
        storage: Default::default(),
    };
    let (spec, _) = prior_spectrum_torus(PriorDecay::Power { p: 3.0 }, dim, 0.0).expect("valid prior");
    let m = setup.observations.m();
    let base = AdrProblem::new(setup, vec![0.0; m]).expect("valid problem");
    let truth = spec.sample_gaussian(&mut stream(1, tag::DATA_TRUTH, 0));
    let y = base.observations(&truth).expect("forward solve");
    (base.with_data(y).expect("matching data"), spec)
}

pub fn prior_draw(spec: &CovarianceSpectrum, seed: u64) -> Field {
    spec.sample_gaussian(&mut stream(seed, tag::PROBE, 0))
}
