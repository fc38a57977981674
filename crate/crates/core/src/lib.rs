//! Risk-sensitive optimal portfolios for jump-diffusion markets whose
//! coefficients switch under independent age-dependent semi-Markov regimes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod hamiltonian;
pub mod market;
pub mod mc_oracle;
pub mod parallel;
pub mod quadrature;
pub mod semi_markov;
pub mod volterra;

pub use error::{Error, Result};
