//! Scaled BYM2 spatial smoothing for areal count data.
//!
//! The crate builds ICAR structure matrices from region adjacency graphs,
//! scales them to unit generalized variance, evaluates penalised-complexity
//! hyperpriors, and fits Poisson disease-mapping models with a Laplace
//! approximation over a pruned hyperparameter grid.
//!
//! Grid-point evaluations and simulation replicates run through
//! [`parallel::Execution`]; with the `parallel` feature (default) they use
//! rayon, otherwise they fall back to sequential loops.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod graph;
pub mod inference;
pub mod linalg;
pub mod models;
pub mod parallel;
pub mod priors;
pub mod scaling;
pub mod sim;

pub use error::{Error, Result};
pub use graph::Graph;
pub use inference::{fit, Dataset, FitConfig, FitResult};
pub use linalg::{CholeskyFactor, ConstraintSet, SymSparseMatrix};
pub use models::{LatentModel, ModelKind, ModelSpec};
pub use scaling::{scale_structured, ScaledStructure};
