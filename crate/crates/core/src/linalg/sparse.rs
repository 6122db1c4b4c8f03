use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Symmetric sparse matrix storing the lower triangle column by column.
///
/// Row indices within a column are strictly increasing. Explicit zeros are
/// kept, and matrices built for different parameter values share one
/// sparsity pattern and one symbolic factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct SymSparseMatrix {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SymSparseMatrix {
    /// Builds from (row, col, value) triplets; upper-triangle entries are
    /// mirrored into the lower triangle and duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let coords: Vec<(usize, usize)> = triplets.iter().map(|&(r, c, _)| (r, c)).collect();
        let (mut m, map) = Self::pattern_from_coords(n, &coords)?;
        for (k, &(_, _, v)) in triplets.iter().enumerate() {
            m.values[map[k]] += v;
        }
        Ok(m)
    }

    /// Builds an all-zero matrix with the union pattern of `coords`, and
    /// returns for every coordinate the storage position it maps to.
    pub fn pattern_from_coords(n: usize, coords: &[(usize, usize)]) -> Result<(Self, Vec<usize>)> {
        let mut lower: Vec<(usize, usize, usize)> = Vec::with_capacity(coords.len());
        for (k, &(r, c)) in coords.iter().enumerate() {
            if r >= n || c >= n {
                return Err(Error::DimensionMismatch { expected: n, got: r.max(c) + 1 });
            }
            let (r, c) = if r >= c { (r, c) } else { (c, r) };
            lower.push((c, r, k));
        }
        lower.sort_unstable();
        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(lower.len());
        let mut map = vec![0usize; coords.len()];
        let mut last: Option<(usize, usize)> = None;
        for &(c, r, k) in &lower {
            if last != Some((c, r)) {
                row_idx.push(r);
                col_ptr[c + 1] += 1;
                last = Some((c, r));
            }
            map[k] = row_idx.len() - 1;
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        let nnz = row_idx.len();
        Ok((
            Self {
                n,
                col_ptr,
                row_idx,
                values: vec![0.0; nnz],
            },
            map,
        ))
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self {
            n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
        }
        let n = m.nrows();
        let mut trip = Vec::new();
        for c in 0..n {
            for r in c..n {
                if m[(r, c)] != 0.0 || r == c {
                    trip.push((r, c, m[(r, c)]));
                }
            }
        }
        Self::from_triplets(n, &trip)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored lower-triangle entries.
    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Same pattern, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.nnz() {
            return Err(Error::DimensionMismatch { expected: self.nnz(), got: values.len() });
        }
        Ok(Self {
            n: self.n,
            col_ptr: self.col_ptr.clone(),
            row_idx: self.row_idx.clone(),
            values,
        })
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.n == other.n && self.col_ptr == other.col_ptr && self.row_idx == other.row_idx
    }

    /// Iterates stored lower-triangle entries as (row, col, value).
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |p| (self.row_idx[p], c, self.values[p]))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let rows = &self.row_idx[self.col_ptr[c]..self.col_ptr[c + 1]];
        match rows.binary_search(&r) {
            Ok(p) => self.values[self.col_ptr[c] + p],
            Err(_) => 0.0,
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mean_diag(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.diag().iter().sum::<f64>() / self.n as f64
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= s);
        m
    }

    /// y = M x.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: x.len() });
        }
        let mut y = vec![0.0; self.n];
        for (r, c, v) in self.iter() {
            y[r] += v * x[c];
            if r != c {
                y[c] += v * x[r];
            }
        }
        Ok(y)
    }

    /// Sub-matrix on the given (sorted or unsorted) index set, re-indexed 0..k.
    pub fn submatrix(&self, idx: &[usize]) -> Self {
        let mut pos = vec![usize::MAX; self.n];
        for (k, &i) in idx.iter().enumerate() {
            pos[i] = k;
        }
        let trip: Vec<_> = self
            .iter()
            .filter(|&(r, c, _)| pos[r] != usize::MAX && pos[c] != usize::MAX)
            .map(|(r, c, v)| (pos[r], pos[c], v))
            .collect();
        Self::from_triplets(idx.len(), &trip).expect("indices remapped into range")
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (r, c, v) in self.iter() {
            m[(r, c)] += v;
            if r != c {
                m[(c, r)] += v;
            }
        }
        m
    }
}
