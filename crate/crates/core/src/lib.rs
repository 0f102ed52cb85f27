//! Galerkin boundary element solver for two-dimensional linear-elastic
//! delamination problems with a nonmonotone adhesive contact law.
//!
//! The pipeline is: [`mesh`] builds the hp boundary mesh and dof maps,
//! [`kernels`] assembles the Galerkin matrices of the Calderón operators,
//! [`steklov`] forms the symmetric Poincaré–Steklov operator and the load,
//! [`regularization`] smooths the adhesion law, [`solver`] solves the
//! resulting discrete variational inequality, [`multiplier`] recovers the
//! contact stress, [`estimator`] computes the a-posteriori indicators and
//! [`adaptivity`] drives the solve–mark–refine loop. [`experiments`] wires
//! everything into reproducible sequences with CSV/JSON outputs.

pub mod adaptivity;
pub mod estimator;
pub mod experiments;
pub mod geometry;
pub mod kernels;
pub mod mesh;
pub mod multiplier;
pub mod polynomial;
pub mod quadrature;
pub mod regularization;
pub mod solver;
pub mod steklov;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("single layer matrix is not positive definite")]
    SingularV,
    #[error("assembly diagnostics: {0}")]
    Diagnostics(String),
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
