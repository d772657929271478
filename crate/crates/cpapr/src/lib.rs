//! CP-APR: low-rank Poisson factorization of sparse count tensors.
//!
//! The data is an N-way tensor of nonnegative integer counts stored in
//! coordinate format; the model is a Kruskal tensor (weights plus
//! column-stochastic factor matrices). Fitting minimizes the generalized
//! KL divergence with an alternating majorization-minimization scheme
//! built around multiplicative updates, with a small "scooch"
//! perturbation that keeps iterates from sticking at zeros that violate
//! the KKT conditions.
//!
//! Modules:
//! - [`tensor`]: coordinate tensors, Kruskal models, matricization and
//!   Khatri-Rao primitives.
//! - [`objective`]: KL objective, the Phi multiplier matrix, gradients,
//!   KKT residuals, and a full-row-rank diagnostic.
//! - [`solver`]: the alternating solver with sparse Phi kernels.
//! - [`datagen`]: planted-model generator and ball-in-urn sampler.
//! - [`metrics`]: factor match score and column congruence counts.
//! - [`io`]: text file formats for tensors and models.

pub mod datagen;
pub mod error;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod solver;
pub mod tensor;

pub use error::{CpAprError, Result};
pub use tensor::{KruskalModel, SparseCountTensor};
