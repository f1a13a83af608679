//! Decoupled linear finite element solver for two-phase incompressible flow
//! of conducting fluids in the inductionless limit.
//!
//! Each time step solves three linear systems in sequence: a Cahn-Hilliard
//! system for the phase field, a mixed current/potential system and an
//! Oseen-type velocity/pressure system.

// NaN-rejecting `!(x > 0.0)` guards and full-precision quadrature constants are deliberate.
#![allow(
    clippy::needless_range_loop,
    clippy::type_complexity,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::excessive_precision
)]

pub mod diagnostics;
pub mod experiments;
pub mod fespace;
pub mod forms;
pub mod linalg;
pub mod mesh;
pub mod quadrature;
pub mod scheme;

pub use diagnostics::{
    bubble_centroid_y, convergence_orders, dissipation, div_j_norm, error_norms, infsup_estimate, interface_proxy,
    mass, observed_order, total_energy, ErrorReport, Norm,
};
pub use experiments::{
    case_by_name, run_sweep, sweep_cases, verify_forcing, CaseError, Equation, ExactSolution, ForcingReport,
    ForcingSet, ProblemCase, SpatialExact, SweepMode, TemporalExact, CASE_NAMES,
};
pub use fespace::{Constraint, FeSpace, FieldCoefficients, SpaceKind};
pub use linalg::{DirectSolver, LinalgError, SolveStage, SparseMatrix};
pub use mesh::{structured_rect_mesh, unit_square, BoundaryMarker, Mesh, MeshError, Point};
pub use scheme::{
    CouplingIndex, Discretization, MagneticField, ProblemData, RunFailure, Scheme, SchemeError, SchemeParams, State,
    StepLog, Trajectory,
};

/// Any failure surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Case(#[from] CaseError),
}
