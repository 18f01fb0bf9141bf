//! Regularized solvers for backward parabolic final-value problems
//! `u' + Au = f`, `u(τ) = φ_τ`, with `A` diagonal, positive and self-adjoint.
//!
//! Everything is expressed in the eigenbasis of `A`: states are
//! [`SpectralVector`]s, operators are scalar symbols applied per mode.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod evolution;
pub mod experiments;
pub mod problem_file;
pub mod quadrature;
pub mod regularization;
pub mod spectral;

pub use error::{Error, Result};
pub use evolution::{
    accumulate_psi, fvp_mild_solution, ivp_mild_solution, manufacture_problem, FinalValueProblem, ModeFunction,
    ModeTerm, SourceTerm, Truth,
};
pub use regularization::{
    choose_alpha_lavrentiev, choose_beta_exponential, choose_beta_general, lavrentiev_solution, stability_bound,
    truncated_solution, truncation_error_bound, RegChoice, SourceCondition,
};
pub use spectral::{EigenSystem, ScalarSymbol, SpectralVector};
