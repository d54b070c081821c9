//! Local Gaussian-process emulators built on clustered active subspaces.
//!
//! Training samples `(x, f(x), grad f(x))` are grouped by gradient
//! similarity, each group gets its own active subspace, a support vector
//! classifier learns to route new inputs to a group, and a low-dimensional
//! Gaussian process in that group's reduced coordinates makes the
//! prediction.
//!
//! Modules, bottom-up:
//! - [`data`], [`benchmarks`]: samples, CSV I/O, the analytic test functions
//! - [`subspace`]: gradient-moment matrices, eigen-splitting, SIR / SAVE
//! - [`clustering`]: gradient-cosine distance and average-linkage clustering
//! - [`classifier`]: one-vs-one SVM router
//! - [`gp`]: squared-exponential GP regression with marginal-likelihood fitting
//! - [`pipeline`]: the clustered emulator, baselines, NMSE, CV and diagnostics

pub mod benchmarks;
pub mod classifier;
pub mod clustering;
pub mod data;
pub mod error;
pub mod gp;
pub mod linalg;
pub mod pipeline;
pub mod rng;
pub mod subspace;

pub use error::{Error, Result};
