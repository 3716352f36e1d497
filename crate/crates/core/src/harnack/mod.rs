//! Finite-difference Dirichlet problems for `L_A` in exponential coordinates and
//! empirical Harnack and critical-density measurements.
//!
//! The discretisation uses centred differences with the four-point cross for
//! mixed derivatives. It is not monotone in general, so the discrete maximum
//! principle can fail; undershoots are reported rather than hidden.

mod assembly;
mod experiments;
pub mod grid;
pub mod sparse;

pub use assembly::{
    assemble_system, expand_la_coordinates, solve_dirichlet, solve_preset, Boundary, BoundaryData,
    DiscreteSolution, LinearSystem, SolverKind, DIRECT_TOLERANCE, ITERATIVE_TOLERANCE,
};
pub use experiments::{
    critical_density_experiment, dilation_consistency, harnack_quotient, quotient_refinement,
    random_landis_cases, run_sweep, DensityReport, DilatedField, DilationEntry, DilationReport,
    HarnackCase, HarnackReport, SweepRow, SweepSummary, UNDERSHOOT_TOLERANCE,
};
pub use grid::GridSpec;
