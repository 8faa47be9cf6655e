//! Radial numerics for `i u_t + Δu = -|u|^{4/(d-2)} u + |u|^{4/(d-1)} u` on `R^d`.
//!
//! Fields are radial and sampled on a uniform grid over `[0, r_max]`. The
//! crate provides the conserved and variational functionals, the ground
//! state threshold, a split-step time integrator and the monitoring
//! quantities (virial moments, exterior energy, space-time norms).

pub mod cutoff;
pub mod diagnostics;
pub mod functionals;
pub mod grid;
pub mod quadrature;
pub mod solver;
pub mod tridiag;
pub mod variational;

pub use num_complex::Complex64;

pub use cutoff::CutoffKind;
pub use diagnostics::{
    classify_outcome, exterior_energy, spacetime_norms, truncated_position, virial, Classification, DiagnosticsError,
    Evidence, OutcomeReport, SpacetimeNorms, VirialSample,
};
pub use functionals::{
    classify_membership, evaluate, ground_state, report, scale, threshold, FieldSpec, FunctionalError,
    FunctionalReport, Membership, ThresholdResult,
};
pub use grid::{laplacian, lp_norm, radial_derivative, GridError, GridRef, RadialField, RadialGrid};
pub use solver::{evolve, InitialData, Outcome, SimulationTrace, SolverConfig, SolverError};
pub use variational::{
    check_threshold_bounds, find_lambda0, sampled_infimum, scaling_path, BoundReport, Constraint, VariationalError,
};
