//! Simulation and optimization of adiabatic ground-state preparation on
//! one-dimensional spin chains.
//!
//! The crate provides a dense statevector simulator and a matrix product
//! state simulator behind a common [`Register`](statevector::Register) trait,
//! Trotterized adiabatic evolution under chunked schedules, adiabatic
//! spectroscopy, ancilla-based overlap estimators, variational schedule
//! optimizers, sequential Bayesian hypothesis tests and Pauli trajectory
//! noise.

pub mod cli;
pub mod error;
pub mod evolve;
pub mod hamiltonian;
pub mod inference;
pub mod linalg;
pub mod mps;
pub mod noise;
pub mod overlap;
pub mod spectroscopy;
pub mod statevector;
pub mod vqaa;

pub use error::{Error, Result};
