//! Workbench for effective tensors of periodic two-coefficient media.
//!
//! The crate computes the homogenized tensors of a periodic pair (A, B) by
//! solving cell problems on the unit torus, then cross-checks the results
//! through Bloch-wave spectral representations, algebraic bound chains, a
//! variational identity, and a one-dimensional oscillating-coefficient
//! convergence experiment.

pub mod bloch;
pub mod cell_solver;
pub mod config;
pub mod error;
pub mod grid;
pub mod homogenize1d;
pub mod matrix;
pub mod microstructure;
pub mod report;
pub mod runner;
pub mod tensors;

pub use error::{Error, Result};
