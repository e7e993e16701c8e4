//! Impulse control of jump diffusions in one dimension: Lévy quadrature and
//! truncation, monotone discretization of the nonlocal operator, a QVI solver,
//! jump SDE simulation and numerical checks of the a-priori estimates.

pub mod config;
pub mod error;
pub mod levy;
pub mod linalg;
pub mod model;
pub mod operators;
pub mod qvi;
pub mod simulate;
pub mod verify;

pub use error::{Error, Result};
pub use levy::{LevyMeasure1D, LevyQuadrature, QuadratureBuilder};
pub use model::{Drift, Jump, ProblemSpec, RunningCost, TransactionCost, Volatility};
pub use operators::{Extension, Grid1D, SmallJumpMode, ValueField};
pub use qvi::{solve_qvi, ImpulsePolicy, QviSolution, SolveConfig};
