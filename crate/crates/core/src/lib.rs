//! Censored quantile regression on the cumulative-probability scale.
//!
//! The estimator solves an exact estimating integral equation round by
//! round: each round minimises a constrained piecewise-linear objective with
//! an active-set method, yielding the coefficient vector, the interpolated
//! basis with its split weights and dual multipliers, and the relative
//! breakpoint at which the next segment starts. In special cases the fit
//! reduces exactly to the Kaplan-Meier quantile (one sample) and to standard
//! uncensored quantile regression.
//!
//! Everything is generic over the floating-point type through [`Scalar`];
//! `f64` aliases are exported at the crate root.

pub mod inference;
mod linalg;
pub mod model;
pub mod oracles;
pub mod process;
mod rng;
pub mod scalar;
pub mod sim;
pub mod solver;

pub use model::{
    read_csv, DataError, Dataset, LoadedCsv, Observation, PiecewiseLinear, QuantileProcess,
    RawRow, SegmentFlag, SegmentTrace, StepFunction,
};
pub use process::{equation_residual, fit, fit_weighted, phi_trace, FitConfig, FitError};
pub use scalar::Scalar;
pub use solver::{
    compute_breakpoint, resolve_degeneracy, solve_round, update_weights, verify_segment,
    PartitionState, RoundInput, RoundOutput, RoundSolver, SolveError, TOL_DUAL,
};

pub type Dataset64 = Dataset<f64>;
pub type QuantileProcess64 = QuantileProcess<f64>;
pub type StepFunction64 = StepFunction<f64>;
pub type FitConfig64 = FitConfig<f64>;

pub type Dataset32 = Dataset<f32>;
pub type QuantileProcess32 = QuantileProcess<f32>;
