//! Recovering a divergence-free velocity on the 2-torus from observations
//! of a passive scalar it advects.

pub mod basis;
pub mod grid;
pub mod observe;
pub mod potential;
pub mod solver;

pub use basis::{embedding_audit, prior_spectrum_torus, DivFreeBasis, EmbeddingAudit, PriorDecay};
pub use grid::{SpectralOps, TorusGrid, VelocityGrid};
pub use observe::{observe, ObservationKind, ObservationSpec};
pub use potential::{hessian_audit, AdrProblem, AdrSetup, FourierTerm, InitialCondition};
pub use solver::{AdrSolver, ScalarState, Storage, Trajectory};
