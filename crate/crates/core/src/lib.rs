//! Discretized generalized condensers in R^n under α-Riesz and α-Green kernels.
//!
//! The crate builds node discretizations of signed plates, assembles kernel
//! matrices, sweeps measures onto the complement of a domain (balayage as an
//! energy-norm projection), solves the constrained minimum-energy problem for
//! vector measures, and checks solutions against their characterization.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod balayage;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod nnls;
pub mod scenarios;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
pub use exec::Execution;
