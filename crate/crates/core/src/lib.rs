//! Sparse Kronecker-structured precision estimation for tensor-variate data.
//!
//! The model is the Sylvester graphical model: a tensor `X` with dims
//! `(d_1, .., d_K)` solves `sum_k X x_k Psi_k = T` for white noise `T`, so
//! `vec(X)` has precision `Omega = (Psi_1 (+) .. (+) Psi_K)^2` with sparse
//! symmetric factors `Psi_k`.
//!
//! * [`tensor`] holds the tensor container and Kronecker-sum algebra.
//! * [`sgpalm`] and [`syglasso`] estimate the factors from samples.
//! * [`pde`] generates factors and PDE-driven spatio-temporal data.
//! * [`enkf`] is an ensemble Kalman filter whose gain uses those estimators.
//!
//! Vectorization puts the first mode fastest and modes are zero-based.

pub mod enkf;
pub mod error;
pub mod gram;
pub mod kten;
pub mod linalg;
pub mod metrics;
pub mod pde;
pub mod penalty;
pub mod rng;
pub mod sgpalm;
pub mod syglasso;
pub mod tensor;

#[doc(hidden)]
pub mod cli;

pub use error::{Error, KtenError, Result};
pub use gram::{GramSet, SampleSet};
pub use penalty::{PenaltyKind, PenaltySpec};


pub use tensor::{DenseTensor, KronSumOperator, SylvesterFactors, SymSparseMatrix};
