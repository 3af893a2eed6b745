//! Curvature anatomy for small softmax classifiers.
//!
//! The crate trains multilayer perceptrons with cross-entropy loss and takes
//! apart the Gauss-Newton term of their Hessian. The central object is the
//! matrix `Δ` of scaled, centered logit derivatives: one column per
//! (example, logit coordinate) pair, so that `G = (1/n) Δ Δᵀ`. Grouping the
//! columns by class and logit coordinate splits `G` into four positive
//! semi-definite pieces `G = G0 + G1 + G2 + G3`, and the top-`C` eigenvalues
//! of `G` — the spectral outliers — are reproduced by the eigenvalues of a
//! tiny `C×C` Gram matrix of cluster centers, with no large eigenanalysis.
//!
//! Modules:
//! - [`linalg`]: dense vectors/matrices and a self-contained symmetric
//!   eigensolver (Householder tridiagonalization + implicit-shift QL).
//! - [`logistic`]: softmax cross-entropy, its derivatives, and the
//!   square-root factorization of its Hessian.
//! - [`model`]: a deterministic MLP with exact per-example logit Jacobians.
//! - [`data`]: Gaussian-mixture generation plus CSV and IDX loaders.
//! - [`train`]: SGD with momentum, weight decay, and epoch snapshots.
//! - [`decomp`]: construction of `Δ`, the hierarchy statistics, and the
//!   matrix-free operators `G`, `G0`..`G3`, `G12`.
//! - [`spectrum`]: stochastic Lanczos quadrature densities, deflated top-k
//!   eigenvalues, and outlier comparison reports.

pub mod data;
pub mod decomp;
pub mod error;
pub mod linalg;
pub mod logistic;
pub mod model;
pub mod seed;
pub mod spectrum;
pub mod train;

pub use error::{Error, Result};
