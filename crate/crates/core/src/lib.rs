//! Deterministic equivalents for the resolvent of sample covariance matrices of concentrated
//! mixture models, with Monte-Carlo tools to check them.
//!
//! Data are `p x n` matrices whose columns come from `k` classes. For `z > 0` the resolvent
//! `Q = (X X^T / n + z I)^-1` is approximated by `(sum_l (n_l/n) Sigma_l / (1 + delta'_l) + z I)^-1`
//! where `delta'` solves a fixed-point equation ([`fixed_point::solve_delta`]).

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conc_lab;
pub mod equivalent;
pub mod error;
pub mod fixed_point;
pub mod io;
pub mod linalg;
pub mod majorization;
pub mod model;
pub mod sampler;

pub use error::{Error, Result};
pub use fixed_point::{
    solve_delta, solve_delta_complex, Backend, ComplexFixedPointSolution, ComplexSolverOptions,
    FixedPointSolution, SolverOptions,
};
pub use model::{ClassModel, GeneratorKind, GeneratorSpec, LatentLaw, Mixture, Nonlinearity};
pub use sampler::Population;
