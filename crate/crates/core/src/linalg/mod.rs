//! Sparse symmetric matrices, Cholesky factorization, constrained Gaussian
//! computations, and dense reference routines.

mod cholesky;
mod constraints;
pub mod dense;
mod sparse;

pub use cholesky::{CholeskyFactor, SelectedInverse, Symbolic};
pub use constraints::{
    constrained_marginal_variances, default_jitter, sample_constrained_gmrf, ConstraintSet, Kriging,
};
pub use dense::{dense_constrained_variances, dense_pseudo_inverse, eigenvalues_sym};
pub use sparse::SymSparseMatrix;

/// Factorizes `m + jitter·I`.
pub fn factorize(m: &SymSparseMatrix, jitter: f64) -> crate::Result<CholeskyFactor> {
    CholeskyFactor::new(m, jitter)
}
