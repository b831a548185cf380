//! Multi-task multiple kernel learning with learned neighborhood alignment
//! matrices.
//!
//! Each of `T` tasks combines `M` base kernels with nonnegative weights
//! split into a shared part and a task-specific part. Training alternates
//! three exact block updates: a closed-form refresh of per-task alignment
//! targets, independent SVM/SVR dual solves on the combined kernels, and a
//! nonnegative quadratic program in the kernel weights. The alignment
//! targets are symmetric but not required to be positive semidefinite; a
//! complexity-derived regularizer couples them to the Gram-trace geometry
//! of the kernel bank.
//!
//! Module map:
//! - [`linalg`]: dense matrices and ridge-regularized symmetric solves
//! - [`kernels`]: base kernels, Gram banks, normalization, alignment score
//! - [`structure`]: the Gram-trace aggregates `A`, `b`, `c`, `d`, `q`, `V`
//! - [`svm`]: per-task SMO solvers for classification and regression
//! - [`subproblems`]: the weight QP and the neighborhood closed form
//! - [`bounds`]: the regularizer, the complexity bound, and its oracles
//! - [`trainer`]: block coordinate descent, baselines, prediction
//! - [`data`]: CSV ingestion, the split protocol, synthetic task generator

pub mod bounds;
pub mod data;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod structure;
pub mod subproblems;
pub mod svm;
pub mod trainer;

pub use error::{Error, Result};
