use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{CholeskyFactor, SymSparseMatrix};
use crate::error::{Error, Result};

/// Linear equality constraints `A x = e` with sparse rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintSet {
    dim: usize,
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
}

impl ConstraintSet {
    pub fn empty(dim: usize) -> Self {
        Self { dim, rows: Vec::new(), rhs: Vec::new() }
    }

    /// Checks that the rows are in range and linearly independent.
    pub fn new(dim: usize, rows: Vec<Vec<(usize, f64)>>, rhs: Vec<f64>) -> Result<Self> {
        if rows.len() != rhs.len() {
            return Err(Error::DimensionMismatch { expected: rows.len(), got: rhs.len() });
        }
        if let Some(&(j, _)) = rows.iter().flatten().find(|(j, _)| *j >= dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: j + 1 });
        }
        let c = Self { dim, rows, rhs };
        if !c.is_empty() {
            let mut gram = DMatrix::zeros(c.len(), c.len());
            let dense = c.dense_rows();
            for a in 0..c.len() {
                for b in 0..c.len() {
                    gram[(a, b)] = dense[a].dot(&dense[b]);
                }
            }
            let eig = gram.symmetric_eigenvalues();
            let max = eig.max();
            if !(eig.min() > 1e-12 * max) {
                return Err(Error::SingularConstraint);
            }
        }
        Ok(c)
    }

    /// One sum-to-zero row per index group.
    pub fn sum_to_zero(dim: usize, groups: &[Vec<usize>]) -> Result<Self> {
        let rows = groups
            .iter()
            .map(|g| g.iter().map(|&i| (i, 1.0)).collect())
            .collect();
        Self::new(dim, rows, vec![0.0; groups.len()])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// Embeds into a larger vector space, shifting column indices by `offset`.
    pub fn embed(&self, dim: usize, offset: usize) -> Result<Self> {
        let rows = self
            .rows
            .iter()
            .map(|r| r.iter().map(|&(j, v)| (j + offset, v)).collect())
            .collect();
        Self::new(dim, rows, self.rhs.clone())
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, v)| v * x[j]).sum())
            .collect()
    }

    fn dense_rows(&self) -> Vec<DVector<f64>> {
        self.rows
            .iter()
            .map(|r| {
                let mut v = DVector::zeros(self.dim);
                for &(j, a) in r {
                    v[j] += a;
                }
                v
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.len(), self.dim);
        for (k, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                a[(k, j)] += v;
            }
        }
        a
    }
}

/// Pieces of the conditioning-by-kriging correction for a factored precision:
/// `W = M⁻¹ Aᵀ` (one column per constraint) and the Cholesky factor of `A W`.
#[derive(Debug, Clone)]
pub struct Kriging {
    w: Vec<Vec<f64>>,
    awt_chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl Kriging {
    pub fn new(factor: &CholeskyFactor, c: &ConstraintSet) -> Result<Self> {
        if c.dim() != factor.dim() {
            return Err(Error::DimensionMismatch { expected: factor.dim(), got: c.dim() });
        }
        if c.is_empty() {
            return Ok(Self { w: Vec::new(), awt_chol: None });
        }
        let mut w = Vec::with_capacity(c.len());
        for row in c.rows() {
            let mut a = vec![0.0; c.dim()];
            for &(j, v) in row {
                a[j] += v;
            }
            w.push(factor.solve(&a)?);
        }
        let k = c.len();
        let mut awt = DMatrix::zeros(k, k);
        for (r, row) in c.rows().iter().enumerate() {
            for (col, wc) in w.iter().enumerate() {
                awt[(r, col)] = row.iter().map(|&(j, v)| v * wc[j]).sum();
            }
        }
        let awt = (&awt + awt.transpose()) * 0.5;
        let chol = awt.cholesky().ok_or(Error::SingularConstraint)?;
        Ok(Self { w, awt_chol: Some(chol) })
    }

    pub fn n_constraints(&self) -> usize {
        self.w.len()
    }

    /// log det(A M⁻¹ Aᵀ); zero without constraints.
    pub fn log_det_awt(&self) -> f64 {
        self.awt_chol
            .as_ref()
            .map_or(0.0, |c| 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }

    /// `x - W (A W)⁻¹ (A x - e)`.
    pub fn correct(&self, c: &ConstraintSet, x: &mut [f64]) {
        let Some(chol) = &self.awt_chol else { return };
        let ax = c.apply(x);
        let resid = DVector::from_iterator(ax.len(), ax.iter().zip(c.rhs()).map(|(a, e)| a - e));
        let lam = chol.solve(&resid);
        for (k, wk) in self.w.iter().enumerate() {
            let l = lam[k];
            for (xi, wi) in x.iter_mut().zip(wk) {
                *xi -= wi * l;
            }
        }
    }

    /// Variance reduction `vᵀ (A W)⁻¹ v` with `v = Wᵀ b` for a sparse vector `b`.
    pub fn variance_correction(&self, b: &[(usize, f64)]) -> f64 {
        let Some(chol) = &self.awt_chol else { return 0.0 };
        let v = DVector::from_iterator(
            self.w.len(),
            self.w.iter().map(|wk| b.iter().map(|&(j, a)| a * wk[j]).sum::<f64>()),
        );
        v.dot(&chol.solve(&v))
    }
}

/// Diagonal of `Var(x | A x = 0)` for `x ~ N(0, (q + jitter·I)⁻¹)`.
pub fn constrained_marginal_variances(q: &SymSparseMatrix, c: &ConstraintSet, jitter: f64) -> Result<Vec<f64>> {
    let factor = CholeskyFactor::new(q, jitter)?;
    let kriging = Kriging::new(&factor, c)?;
    let diag = factor.selected_inverse().diag();
    Ok(diag
        .iter()
        .enumerate()
        .map(|(i, &d)| d - kriging.variance_correction(&[(i, 1.0)]))
        .collect())
}

/// Draws from `N(0, (q + jitter·I)⁻¹)` conditioned on `A x = e` by kriging.
pub fn sample_constrained_gmrf<R: Rng + ?Sized>(
    q: &SymSparseMatrix,
    c: &ConstraintSet,
    jitter: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let factor = CholeskyFactor::new(q, jitter)?;
    let kriging = Kriging::new(&factor, c)?;
    let mut x = factor.sample(rng);
    kriging.correct(c, &mut x);
    Ok(x)
}

/// Default regularisation for singular structure matrices: a small multiple of
/// the mean diagonal, so the jitter is independent of the matrix scale.
pub fn default_jitter(q: &SymSparseMatrix) -> f64 {
    1e-6 * q.mean_diag()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path(n: usize) -> SymSparseMatrix {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::from_edges(n, &edges).unwrap().besag_precision()
    }

    #[test]
    fn p2_sum_to_zero_variances() {
        let c = ConstraintSet::sum_to_zero(2, &[vec![0, 1]]).unwrap();
        let v = constrained_marginal_variances(&path(2), &c, 1e-8).unwrap();
        assert!((v[0] - 0.25).abs() < 1e-6);
        assert!((v[1] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn p3_sum_to_zero_variances() {
        let c = ConstraintSet::sum_to_zero(3, &[vec![0, 1, 2]]).unwrap();
        let v = constrained_marginal_variances(&path(3), &c, 1e-6).unwrap();
        let expected = [5.0 / 9.0, 2.0 / 9.0, 5.0 / 9.0];
        for i in 0..3 {
            assert!((v[i] - expected[i]).abs() < 1e-3, "{v:?}");
        }
    }

    #[test]
    fn identity_without_constraints() {
        let v = constrained_marginal_variances(&SymSparseMatrix::identity(4), &ConstraintSet::empty(4), 0.0).unwrap();
        assert_eq!(v, vec![1.0; 4]);
    }

    #[test]
    fn dependent_rows_are_rejected() {
        let rows = vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 2.0), (1, 2.0)]];
        assert!(matches!(
            ConstraintSet::new(2, rows, vec![0.0, 0.0]),
            Err(Error::SingularConstraint)
        ));
    }

    #[test]
    fn samples_satisfy_constraint_and_are_reproducible() {
        let c = ConstraintSet::sum_to_zero(3, &[vec![0, 1, 2]]).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(11);
        let mut r2 = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = sample_constrained_gmrf(&path(3), &c, 1e-6, &mut r1).unwrap();
            let b = sample_constrained_gmrf(&path(3), &c, 1e-6, &mut r2).unwrap();
            assert_eq!(a, b);
            assert!(a.iter().sum::<f64>().abs() < 1e-10);
        }
    }
}
