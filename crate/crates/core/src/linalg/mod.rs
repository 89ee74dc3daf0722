//! Sparse linear algebra: CSR storage, restarted GMRES, preconditioners,
//! a dense LU reference and the Newton driver.

pub mod amg;
pub mod dense;
pub mod gmres;
pub mod newton;
pub mod precond;
pub mod sparse;

use thiserror::Error;

pub use amg::Amg;
pub use dense::{dense_solve, DenseLu};
pub use gmres::{gmres, gmres_with, GmresOutcome, GmresStats, KrylovConfig, LinearOperator};
pub use newton::{check_jacobian, newton, Damping, FnSystem, NewtonConfig, NewtonOutcome, NewtonStats, NonlinearSystem};
pub use precond::{Ilu0, Preconditioner, PreconditionerKind};
pub use sparse::{CsrMatrix, TripletBuilder};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("zero pivot at row {pivot}")]
    Singular { pivot: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error("non-finite residual at Newton iteration {iteration}")]
    NonFiniteResidual { iteration: usize },
    #[error("linear solve failed at Newton iteration {iteration}: {reason}")]
    LinearSolve { iteration: usize, reason: String },
    #[error("line search failed at Newton iteration {iteration} (residual {residual:.3e})")]
    LineSearch { iteration: usize, residual: f64 },
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    let mut m = 0.0f64;
    for v in a {
        if v.is_nan() {
            return f64::NAN;
        }
        m = m.max(v.abs());
    }
    m
}
