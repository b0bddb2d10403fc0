//! Maximum-likelihood quantum state tomography over low-rank factors
//! `rho = U U^dagger`, with fast Pauli measurement kernels, first-order
//! solvers and a computable optimality certificate.
//!
//! Conventions: qubit 0 is the most significant bit of a basis index; Pauli
//! digits are `0 = I, 1 = X, 2 = Y, 3 = Z` with the first digit most
//! significant in the base-4 string index.

pub mod certify;
pub mod error;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod objective;
pub mod parallel;
pub mod povm;
pub mod simulate;
pub mod solvers;
pub mod states;

pub use error::{Error, Result};
pub use linalg::{CMatrix, C64};
