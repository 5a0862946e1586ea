//! Reduction of linear-friction Langevin systems to generalized Langevin
//! models by Petrov–Galerkin projection onto Krylov subspaces.

// `!(x > tol)` is used deliberately so NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fdt;
pub mod io;
pub mod kernel;
pub mod krylov;
pub mod linalg;
pub mod matching;
pub mod moments;
pub mod operators;
pub mod pipeline;
pub mod sim;
pub mod system;

pub use error::{Error, Result};
