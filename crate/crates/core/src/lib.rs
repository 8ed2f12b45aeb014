//! Simulation toolkit for multi-mode bosonic lattice gravimetry with Bayesian
//! post-correction of shot-to-shot inhomogeneity errors.
//!
//! The crate is organised bottom-up:
//!
//! * [`fock`]: fixed-N Fock basis, state vectors and the elementary operators.
//! * [`error_model`]: coupling matrix of the gravity tilt and the error profiles.
//! * [`dynamics`]: random pulse preparation, phase imprint and Loschmidt echo readout.
//! * [`fisher`]: occupancy covariance, QFI/CFI matrices and the effective Fisher information.
//! * [`haar`]: Haar-random states and their closed-form occupancy moments.
//! * [`bayes`]: sequential phase posterior with per-shot error marginalisation.
//! * [`experiments`]: scenario runner behind the `gravlab` CLI.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod dynamics;
pub mod error;
pub mod error_model;
pub mod experiments;
pub mod fisher;
pub mod fock;
pub mod haar;
pub mod propagate;
pub mod quadrature;
pub mod seeding;

pub use error::{Error, Result};
pub use fock::{FockBasis, StateVector};
