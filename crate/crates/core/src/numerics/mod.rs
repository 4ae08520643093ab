//! Numerical kernels shared by the rest of the crate.

mod gamma;
mod lp;
mod rng;
mod root;
mod scalar;

pub use gamma::{ln_gamma, reg_gamma_lower, reg_gamma_upper};
pub use lp::{lp_solve, Constraint, LpProblem, LpSolution, LpStatus, Relation};
pub use rng::{mix64, RngStream};
pub use root::invert_monotone;
pub use scalar::Scalar;
