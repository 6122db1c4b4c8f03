//! Sparse Cholesky factorization `P M Pᵀ = L Lᵀ`.
//!
//! The symbolic phase (minimum-degree ordering and the pattern of `L`) depends
//! only on the sparsity pattern and is shared between all matrices with that
//! pattern. The numeric phase is a left-looking column algorithm.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::SymSparseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Symbolic {
    n: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    /// pinv[old] = new
    pinv: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    /// For each row j, the (column k < j, storage position of L[j,k]) pairs.
    row_struct: Vec<Vec<(usize, usize)>>,
    /// Position in L storage of each stored entry of the analysed pattern.
    a_to_l: Vec<usize>,
    a_col_ptr: Vec<usize>,
    a_row_idx: Vec<usize>,
}

/// Minimum-degree elimination ordering on the graph of `m`; ties are broken
/// by the smallest index, so the ordering is deterministic. Also returns
/// the filled adjacency of each node at its elimination.
fn minimum_degree(m: &SymSparseMatrix) -> (Vec<usize>, Vec<Vec<usize>>) {
    let n = m.dim();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (r, c, _) in m.iter() {
        if r != c {
            adj[r].insert(c);
            adj[c].insert(r);
        }
    }
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|i| (adj[i].len(), i)).collect();
    let mut order = Vec::with_capacity(n);
    let mut filled = vec![Vec::new(); n];
    while let Some(&(deg, v)) = queue.iter().next() {
        queue.remove(&(deg, v));
        let nb: Vec<usize> = adj[v].iter().copied().collect();
        for &u in &nb {
            queue.remove(&(adj[u].len(), u));
            adj[u].remove(&v);
            for &w in &nb {
                if w != u {
                    adj[u].insert(w);
                }
            }
            queue.insert((adj[u].len(), u));
        }
        adj[v].clear();
        filled[v] = nb;
        order.push(v);
    }
    (order, filled)
}

impl Symbolic {
    pub fn analyze(m: &SymSparseMatrix) -> Self {
        let n = m.dim();
        let (perm, filled) = minimum_degree(m);
        let mut pinv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            pinv[old] = new;
        }
        let mut lp = vec![0usize; n + 1];
        let mut li = Vec::new();
        for j in 0..n {
            let mut rows: Vec<usize> = filled[perm[j]].iter().map(|&u| pinv[u]).collect();
            rows.push(j);
            rows.sort_unstable();
            debug_assert!(rows[0] == j);
            li.extend_from_slice(&rows);
            lp[j + 1] = li.len();
        }
        let mut row_struct = vec![Vec::new(); n];
        for k in 0..n {
            for p in lp[k] + 1..lp[k + 1] {
                row_struct[li[p]].push((k, p));
            }
        }
        let mut a_to_l = Vec::with_capacity(m.nnz());
        for (r, c, _) in m.iter() {
            let (i, j) = (pinv[r], pinv[c]);
            let (i, j) = if i >= j { (i, j) } else { (j, i) };
            let col = &li[lp[j]..lp[j + 1]];
            let p = col.binary_search(&i).expect("pattern of L contains pattern of M");
            a_to_l.push(lp[j] + p);
        }
        Self {
            n,
            perm,
            pinv,
            lp,
            li,
            row_struct,
            a_to_l,
            a_col_ptr: m.col_ptr().to_vec(),
            a_row_idx: m.row_idx().to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries of `L` including the diagonal.
    pub fn nnz_l(&self) -> usize {
        self.li.len()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    fn check_pattern(&self, m: &SymSparseMatrix) -> Result<()> {
        if m.dim() != self.n || m.col_ptr() != self.a_col_ptr.as_slice() || m.row_idx() != self.a_row_idx.as_slice() {
            return Err(Error::Config(
                "matrix pattern differs from the analysed pattern".into(),
            ));
        }
        Ok(())
    }

    /// Numeric factorization of `m + diag(shift)`.
    pub fn factor(self: &Arc<Self>, m: &SymSparseMatrix, shift: Option<&[f64]>) -> Result<CholeskyFactor> {
        self.check_pattern(m)?;
        let n = self.n;
        let mut lx = vec![0.0; self.li.len()];
        for (k, &v) in m.values().iter().enumerate() {
            lx[self.a_to_l[k]] += v;
        }
        if let Some(s) = shift {
            if s.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: s.len() });
            }
            for (old, &d) in s.iter().enumerate() {
                let j = self.pinv[old];
                lx[self.lp[j]] += d;
            }
        }
        let mut work = vec![0.0; n];
        for j in 0..n {
            let (start, end) = (self.lp[j], self.lp[j + 1]);
            for p in start..end {
                work[self.li[p]] = lx[p];
            }
            for &(k, pos) in &self.row_struct[j] {
                let ljk = lx[pos];
                for p in pos..self.lp[k + 1] {
                    work[self.li[p]] -= lx[p] * ljk;
                }
            }
            let d = work[j];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    column: self.perm[j],
                    pivot: d,
                });
            }
            let ljj = d.sqrt();
            lx[start] = ljj;
            work[j] = 0.0;
            for p in start + 1..end {
                let i = self.li[p];
                lx[p] = work[i] / ljj;
                work[i] = 0.0;
            }
        }
        Ok(CholeskyFactor {
            symbolic: Arc::clone(self),
            lx,
        })
    }
}

/// Numeric Cholesky factor together with its symbolic analysis.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    symbolic: Arc<Symbolic>,
    lx: Vec<f64>,
}

impl CholeskyFactor {
    /// Factorizes `m + jitter * I` with a fresh symbolic analysis.
    pub fn new(m: &SymSparseMatrix, jitter: f64) -> Result<Self> {
        if jitter < 0.0 {
            return Err(Error::Domain(format!("jitter must be non-negative, got {jitter}")));
        }
        let sym = Arc::new(Symbolic::analyze(m));
        let shift = vec![jitter; m.dim()];
        sym.factor(m, (jitter > 0.0).then_some(shift.as_slice()))
    }

    pub fn dim(&self) -> usize {
        self.symbolic.n
    }

    pub fn symbolic(&self) -> &Arc<Symbolic> {
        &self.symbolic
    }

    /// log det of the factored matrix.
    pub fn log_determinant(&self) -> f64 {
        let s = &self.symbolic;
        2.0 * (0..s.n).map(|j| self.lx[s.lp[j]].ln()).sum::<f64>()
    }

    fn forward(&self, x: &mut [f64]) {
        let s = &self.symbolic;
        for j in 0..s.n {
            let xj = x[j] / self.lx[s.lp[j]];
            x[j] = xj;
            for p in s.lp[j] + 1..s.lp[j + 1] {
                x[s.li[p]] -= self.lx[p] * xj;
            }
        }
    }

    fn backward(&self, x: &mut [f64]) {
        let s = &self.symbolic;
        for j in (0..s.n).rev() {
            let mut v = x[j];
            for p in s.lp[j] + 1..s.lp[j + 1] {
                v -= self.lx[p] * x[s.li[p]];
            }
            x[j] = v / self.lx[s.lp[j]];
        }
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let s = &self.symbolic;
        if b.len() != s.n {
            return Err(Error::DimensionMismatch { expected: s.n, got: b.len() });
        }
        let mut w: Vec<f64> = s.perm.iter().map(|&old| b[old]).collect();
        self.forward(&mut w);
        self.backward(&mut w);
        let mut x = vec![0.0; s.n];
        for (new, &old) in s.perm.iter().enumerate() {
            x[old] = w[new];
        }
        Ok(x)
    }

    /// Draws `x ~ N(0, M⁻¹)` by solving `Lᵀ v = z` for standard normal `z`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let s = &self.symbolic;
        let mut w: Vec<f64> = (0..s.n).map(|_| rng.sample(StandardNormal)).collect();
        self.backward(&mut w);
        let mut x = vec![0.0; s.n];
        for (new, &old) in s.perm.iter().enumerate() {
            x[old] = w[new];
        }
        x
    }

    /// Entries of `M⁻¹` on the pattern of `L` (Takahashi recursions).
    pub fn selected_inverse(&self) -> SelectedInverse {
        let s = &self.symbolic;
        let n = s.n;
        let mut z = vec![0.0; s.li.len()];
        let lookup = |z: &[f64], a: usize, b: usize| -> f64 {
            let (i, k) = if a >= b { (a, b) } else { (b, a) };
            let col = &s.li[s.lp[k]..s.lp[k + 1]];
            let p = col.binary_search(&i).expect("filled pattern is closed under the recursion");
            z[s.lp[k] + p]
        };
        for j in (0..n).rev() {
            let (start, end) = (s.lp[j], s.lp[j + 1]);
            let ljj = self.lx[start];
            for p in (start + 1..end).rev() {
                let i = s.li[p];
                let mut acc = 0.0;
                for q in start + 1..end {
                    acc += self.lx[q] * lookup(&z, i, s.li[q]);
                }
                z[p] = -acc / ljj;
            }
            let mut acc = 0.0;
            for q in start + 1..end {
                acc += self.lx[q] * z[q];
            }
            z[start] = 1.0 / (ljj * ljj) - acc / ljj;
        }
        SelectedInverse {
            symbolic: Arc::clone(&self.symbolic),
            z,
        }
    }
}

/// Entries of an inverse restricted to the filled pattern of its factor.
#[derive(Debug, Clone)]
pub struct SelectedInverse {
    symbolic: Arc<Symbolic>,
    z: Vec<f64>,
}

impl SelectedInverse {
    /// Entry (i, j) in original indexing, if it lies in the filled pattern.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let s = &self.symbolic;
        let (a, b) = (s.pinv[i], s.pinv[j]);
        let (r, c) = if a >= b { (a, b) } else { (b, a) };
        let col = &s.li[s.lp[c]..s.lp[c + 1]];
        col.binary_search(&r).ok().map(|p| self.z[s.lp[c] + p])
    }

    pub fn diag(&self) -> Vec<f64> {
        let s = &self.symbolic;
        (0..s.n).map(|old| self.z[s.lp[s.pinv[old]]]).collect()
    }
}
