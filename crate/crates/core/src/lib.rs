//! Finite-volume laboratory for the nonlinear Fokker-Planck equation
//!
//! ```text
//! f_t = div((f / pi) grad(D log f + phi))
//! ```
//!
//! on the periodic unit torus in one to three dimensions, with diagnostics
//! for its energy law, maximum principle and exponential decay conditions.

pub mod coefficients;
pub mod diagnostics;
pub mod error;
pub mod expr;
pub mod grid;
pub mod scenario;
pub mod solver;
pub mod theory;

pub use coefficients::{
    build_constants_ledger, compute_equilibrium, sample_coefficients, CoefficientError, CoefficientSet,
    CoefficientSpecs, ConstantsLedger, Equilibrium, ProbeTimes,
};
pub use diagnostics::{DiagnosticsError, DiagnosticsRecord, IdentityMode, TermBreakdown, TimeSeries};
pub use error::FieldError;
pub use expr::{parse_expression, CoefficientExpr, ExprError};
pub use grid::{build_grid, integrate, Grid, GridError, ScalarField, VectorField};
pub use solver::{Integrator, SolverConfig, SolverError, SolverState};
