//! Dense reference routines (eigenvalues, pseudo-inverses, constrained
//! covariances) used for the mixing-parameter prior and as test oracles.

use nalgebra::{DMatrix, SymmetricEigen};

use super::{ConstraintSet, SymSparseMatrix};
use crate::error::{Error, Result};

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn eigenvalues_sym(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_square(m)?;
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Pseudo-inverse dropping the `rank_deficiency` eigenvalues of smallest magnitude.
pub fn dense_pseudo_inverse(m: &DMatrix<f64>, rank_deficiency: usize) -> Result<DMatrix<f64>> {
    check_square(m)?;
    let n = m.nrows();
    if rank_deficiency > n {
        return Err(Error::Domain(format!("rank deficiency {rank_deficiency} exceeds dimension {n}")));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].abs().total_cmp(&eig.eigenvalues[b].abs()));
    let mut out = DMatrix::zeros(n, n);
    for &k in &order[rank_deficiency..] {
        let v = eig.eigenvectors.column(k);
        out += (v * v.transpose()) / eig.eigenvalues[k];
    }
    Ok(out)
}

/// Dense `Var(x | A x = 0)` for `x ~ N(0, (q + jitter·I)⁻¹)`.
pub fn dense_constrained_covariance(q: &DMatrix<f64>, c: &ConstraintSet, jitter: f64) -> Result<DMatrix<f64>> {
    check_square(q)?;
    let n = q.nrows();
    let reg = q + DMatrix::identity(n, n) * jitter;
    let sigma = reg
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { column: 0, pivot: f64::NAN })?
        .inverse();
    if c.is_empty() {
        return Ok(sigma);
    }
    let a = c.to_dense();
    let sat = &sigma * a.transpose();
    let asat = &a * &sat;
    let inv = asat.cholesky().ok_or(Error::SingularConstraint)?.inverse();
    Ok(&sigma - &sat * inv * sat.transpose())
}

/// Dense counterpart of [`super::constrained_marginal_variances`].
pub fn dense_constrained_variances(q: &SymSparseMatrix, c: &ConstraintSet, jitter: f64) -> Result<Vec<f64>> {
    let cov = dense_constrained_covariance(&q.to_dense(), c, jitter)?;
    Ok(cov.diagonal().iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p3() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0])
    }

    #[test]
    fn eigenvalues_ascending() {
        let ev = eigenvalues_sym(&p3()).unwrap();
        for (a, b) in ev.iter().zip([0.0, 1.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(eigenvalues_sym(&DMatrix::identity(4, 4)).unwrap(), vec![1.0; 4]);
        let ev = eigenvalues_sym(&DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![5.0, 2.0]))).unwrap();
        assert_eq!(ev, vec![2.0, 5.0]);
    }

    #[test]
    fn pseudo_inverse_of_p2() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let p = dense_pseudo_inverse(&q, 1).unwrap();
        let expected = [[0.25, -0.25], [-0.25, 0.25]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((p[(i, j)] - expected[i][j]).abs() < 1e-14);
            }
        }
        let id = dense_pseudo_inverse(&DMatrix::identity(3, 3), 0).unwrap();
        assert!((id - DMatrix::identity(3, 3)).norm() < 1e-14);
    }

    #[test]
    fn pseudo_inverse_of_p3_diagonal() {
        let p = dense_pseudo_inverse(&p3(), 1).unwrap();
        let expected = [5.0 / 9.0, 2.0 / 9.0, 5.0 / 9.0];
        for i in 0..3 {
            assert!((p[(i, i)] - expected[i]).abs() < 1e-12);
        }
        // P Q P = P
        let ppp = &p * p3() * &p;
        assert!((ppp - &p).norm() < 1e-8);
    }

    #[test]
    fn rejects_non_square() {
        assert!(eigenvalues_sym(&DMatrix::zeros(2, 3)).is_err());
    }
}
