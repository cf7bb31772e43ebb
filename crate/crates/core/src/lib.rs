//! Sieve-GMM inference for conditional moment restriction models under
//! equality and shape (inequality) restrictions.
//!
//! The crate computes the constrained minimum-distance statistic `I_n(R)`,
//! its multiplier-bootstrap approximation over an estimated local parameter
//! space, chi-square critical values for equality-only hypotheses, and runs
//! the size/power simulation design for monotone nonparametric IV
//! regression.
//!
//! Module map:
//! - [`splines`]: quadratic B-spline sieves and derivative linearization.
//! - [`qp`]: dense active-set quadratic programming.
//! - [`gmm`]: moment vector, Jacobian and weighting matrix.
//! - [`inference`]: test statistic, bootstrap, bandwidths, critical values.
//! - [`montecarlo`]: data generation and size/power experiments.
//! - [`cli`]: configuration parsing and command entry points.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod distributions;
mod error;
pub mod gmm;
pub mod inference;
pub mod linalg;
pub mod montecarlo;
pub mod qp;
pub mod rng;
pub mod splines;

pub use error::{Error, Result};
