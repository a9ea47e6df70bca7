//! Numerical laboratory for a UV-regularized fermion-boson Hamiltonian on
//! truncated Fock spaces.
//!
//! The crate builds `H = H0 + H_I` from sampled kernels, computes the
//! second-order counterterm, evaluates raw and reordered Neumann series for
//! the resolvent, audits the operator bounds those series rely on, and runs
//! cutoff sweeps of the renormalized ground energy.

pub mod counterterm;
pub mod error;
pub mod estimates;
pub mod fock;
pub mod hamiltonian;
pub mod linalg;
pub mod modegrid;
pub mod neumann;
pub mod par;
pub mod quadrature;
pub mod spectra;

pub use error::{Error, Result};
pub use num_complex::Complex64;
