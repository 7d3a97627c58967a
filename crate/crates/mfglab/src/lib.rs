//! Numerical laboratory for mean field games with displacement-monotone,
//! non-separable Hamiltonians.
//!
//! The crate computes MFG Nash equilibria through the Pontryagin
//! forward-backward system (a particle two-point BVP solver for the
//! deterministic case and a 1-D HJB/Fokker-Planck grid solver for
//! idiosyncratic noise), audits monotonicity and confinement hypotheses by
//! Monte-Carlo sampling, and measures exponential turnpike rates and
//! ergodic constants against their theoretical bounds.
//!
//! Module map:
//! - [`measures`]: empirical probability measures, moments, Wasserstein
//!   distances, synchronous couplings.
//! - [`models`]: the Hamiltonian/final-cost abstraction with every
//!   derivative the functionals consume, built-in model families, Legendre
//!   transform, finite-difference audits.
//! - [`verify`]: displacement-monotonicity constants, the confining
//!   functionals Q1-Q4, sufficient-condition constants.
//! - [`solve`]: equilibrium solvers, localized agent trajectories, value
//!   function evaluation.
//! - [`turnpike`]: gap functions, differential inequalities, decay-rate
//!   fits, ergodic constants and infinite-horizon limits.
//! - [`experiment`]: config-driven experiment runner, report schema,
//!   deterministic replay, SVG plot emission.

pub mod error;
pub mod experiment;
pub mod linalg;
pub mod measures;
pub mod models;
pub mod solve;
pub mod turnpike;
pub mod verify;

pub use error::{Error, Result};
pub use measures::EmpiricalMeasure;
pub use models::{build_model, BuiltinModelSpec, MfgModel, ModelFamily};
pub use solve::{EquilibriumSolution, SolverConfig};
