#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Simulation and verification of differential equations with
//! state-dependent delay: ODE systems and 1-D parabolic problems of the form
//! `u̇ + Ãu = B(u(t - η(u_t)))`.

pub mod delay;
pub mod history;
pub mod operators;
pub mod scenarios;
pub mod solver;
pub mod verify;

pub use delay::{DelayError, DelayFunctional, DelayKind, IntegralLimits, NestedPoint, ScalarMap, Weight};
pub use history::{HistoryError, HistorySegment, HistoryView, Space, StateVector, StepLog, Trajectory};
pub use operators::{EvolutionOperator, Kernel, Nonlinearity, OperatorError, ScalarFunction};
pub use solver::{
    evolution_map, mild_residual, solve, solve_with, ProblemSpec, SolveOptions, SolverConfig, SolverError,
};
pub use verify::{
    continuous_dependence_probe, dissipation_probe, hadamard_report, holder_regularity_probe, uniqueness_probe,
    AttractorDiagnostics, DependenceSettings, HadamardReport, HadamardSettings, Status, VerifyError,
    WellPosednessConstants,
};
