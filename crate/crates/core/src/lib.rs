//! Exact preconditioned Hamiltonian Monte Carlo on spectrally truncated
//! Hilbert spaces, with diagnostics for its contraction, drift and ergodic
//! behaviour, and a passive-scalar inverse problem to run it on.

// `!(x > 0.0)` is used throughout to reject NaN along with non-positive
// values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adr;
pub mod coupling;
pub mod error;
pub mod flow;
pub mod io;
pub mod kernel;
pub mod lyapunov;
pub mod potential;
pub mod rng;
pub mod spectrum;
pub mod stats;

pub use adr::{AdrProblem, AdrSetup, ObservationKind, ObservationSpec, PriorDecay, TorusGrid};
pub use coupling::{
    harris_constants, Coupler, CouplingSetup, CouplingTrace, HarrisConstants, KappaModel, ShiftVariant,
};
pub use error::{Error, Result};
pub use flow::{flow, flow_linear_exact, hamiltonian, FlowConfig, FlowMethod, PhasePoint};
pub use kernel::{
    admissible_times, fd_hmc_step, hmc_step, run_chain, ChainState, FdKernel, HmcKernel, MassMatrix, RunOptions,
    TimeBudget, TimeCheck, Trajectory,
};
pub use lyapunov::{drift_constants, drift_verify, DriftConstants, LyapunovKind, SearchOptions};
pub use potential::{DiagonalQuadratic, Gaussian, LogCosh, PotentialConstants, PotentialModel};
pub use rng::SimRng;
pub use spectrum::{project, CovarianceSpectrum, Field, NormTag, Part, TailModel};
pub use stats::{clt_sigma, ergodic_average, CltMethod, Observable};
