//! Recovery of joint probability mass functions from low-dimensional marginals.
//!
//! A joint PMF of `N` finite-alphabet variables admits a naive Bayes
//! representation `Pr(i_1..i_N) = Σ_f λ(f) Π_n A_n(i_n, f)`, which is a
//! nonnegative canonical polyadic decomposition whose factor columns and
//! loadings live on the probability simplex. Every marginal of the joint
//! shares the same loadings and factors, so the full model can be estimated
//! by jointly factoring pairwise/triple/quadruple marginals.
//!
//! This crate is `no_std` (it needs `alloc`) and holds the numerical core:
//!
//! - [`tensor`]: dense tensors, unfoldings, Khatri-Rao products, MTTKRP.
//! - [`marginals`]: datasets with missing cells and empirical marginals.
//! - [`factorization`]: the coupled AO-ADMM solver.
//! - [`model`]: inference on a recovered model and the trivial CPD construction.
//! - [`identifiability`]: generic-identifiability rank bounds.
//! - [`harness`]: synthetic models, sampling, baselines and error metrics.
//!
//! File formats, CSV ingestion and the command-line tool live in the `pmfrec`
//! companion crate.

#![cfg_attr(not(test), no_std)]
// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

mod assignment;
mod error;
mod linalg;
mod math;

pub mod factorization;
pub mod harness;
pub mod identifiability;
pub mod marginals;
pub mod model;
pub mod simplex;
pub mod tensor;

pub use error::{Error, Result};
pub use factorization::{fit, FitConfig, FitReport, RhoPolicy, Termination};
pub use marginals::{DiscreteDataset, MarginalEntry, MarginalSet};
pub use model::{Evidence, JointPmfModel};
pub use tensor::{DenseTensor, FactorBundle, Matrix};
