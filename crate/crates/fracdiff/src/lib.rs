//! Solver and verification toolkit for variable-order time-fractional
//! diffusion equations.
//!
//! The crate marches the sigma-weighted implicit difference schemes for
//! Dirichlet and Robin boundary data, monitors the discrete energy
//! estimates that guarantee their stability, and measures convergence
//! against manufactured solutions.
//!
//! - [`fracops`]: gamma, L1 weights, the discrete Caputo operator,
//!   continuous-operator quadrature, and identity residual checkers.
//! - [`mesh`]: uniform grids, difference quotients, discrete inner
//!   products, and solution histories.
//! - [`solver`]: per-step tridiagonal assembly, the Thomas solve, the
//!   stability threshold, and the time march.
//! - [`estimates`]: executable forms of the discrete inequalities, both
//!   as randomized sweeps and as monitors over solver output.
//! - [`verify`]: manufactured-solution registry, error measurement,
//!   convergence studies, and reference-table reproduction.

pub mod estimates;
pub mod fracops;
pub mod mesh;
pub mod solver;
pub mod verify;

pub use estimates::{EstimateRecord, EstimateReport};
pub use fracops::{FracError, L1Weights};
pub use mesh::{Grid, MeshError, SolutionHistory};
pub use solver::{
    BoundaryCondition, ProblemSpec, Sigma, SolverConfig, SolverError, TridiagonalSystem,
};
pub use verify::{ConvergenceTable, ManufacturedProblem, VerifyError};
