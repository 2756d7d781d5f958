//! Compressed sparse row storage used for adjacency matrices and sparse
//! feature matrices.

use ndarray::{Array2, ArrayView2};

use crate::error::{MpcclError, Result};

/// Row-major compressed sparse matrix with sorted, unique column indices per row.
///
/// Explicitly stored zeros are allowed; structural edges of zero weight are
/// kept this way by the coarsener.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        CsrMatrix {
            n_rows,
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds from `(row, col, value)` triplets; duplicate coordinates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut trips: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, _) in &trips {
            if r >= n_rows || c >= n_cols {
                return Err(MpcclError::Contract(format!(
                    "triplet ({r}, {c}) outside {n_rows}x{n_cols}"
                )));
            }
        }
        trips.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(trips.len());
        let mut values: Vec<f64> = Vec::with_capacity(trips.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trips {
            if last == Some((r, c)) {
                *values.last_mut().expect("non-empty") += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..n_rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    /// Sparse copy of a dense matrix, keeping only nonzero entries.
    pub fn from_dense(m: ArrayView2<f64>) -> Self {
        let (n_rows, n_cols) = m.dim();
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in m.rows() {
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_len(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    /// Iterates all stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    /// Whether `(r, c)` is a stored entry (possibly an explicit zero).
    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.indices[self.indptr[r]..self.indptr[r + 1]]
            .binary_search(&c)
            .is_ok()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for (r, c, v) in self.iter() {
            out[[r, c]] += v;
        }
        out
    }

    pub fn transpose(&self) -> CsrMatrix {
        CsrMatrix::from_triplets(self.n_cols, self.n_rows, self.iter().map(|(r, c, v)| (c, r, v)))
            .expect("transpose of a valid matrix is valid")
    }

    /// Largest `|A[r][c] - A[c][r]|` over all stored entries; `None` if not square.
    pub fn max_asymmetry(&self) -> Option<f64> {
        if self.n_rows != self.n_cols {
            return None;
        }
        Some(
            self.iter()
                .map(|(r, c, v)| (v - self.get(c, r)).abs())
                .fold(0.0, f64::max),
        )
    }

    /// `self * rhs` for a dense right-hand side.
    pub fn matmul(&self, rhs: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(self.n_cols, rhs.nrows(), "csr matmul dimension mismatch");
        let mut out = Array2::zeros((self.n_rows, rhs.ncols()));
        for r in 0..self.n_rows {
            let mut out_row = out.row_mut(r);
            for (c, v) in self.row(r) {
                if v != 0.0 {
                    out_row.scaled_add(v, &rhs.row(c));
                }
            }
        }
        out
    }

    /// `selfᵀ * rhs` without materializing the transpose.
    pub fn transpose_matmul(&self, rhs: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(self.n_rows, rhs.nrows(), "csr transpose-matmul dimension mismatch");
        let mut out = Array2::zeros((self.n_cols, rhs.ncols()));
        for r in 0..self.n_rows {
            let rhs_row = rhs.row(r);
            for (c, v) in self.row(r) {
                if v != 0.0 {
                    out.row_mut(c).scaled_add(v, &rhs_row);
                }
            }
        }
        out
    }

    /// Returns `diag(left) * self * diag(right)`.
    pub fn scale_rows_cols(&self, left: &[f64], right: &[f64]) -> CsrMatrix {
        let mut out = self.clone();
        for r in 0..self.n_rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                out.values[k] *= left[r] * right[self.indices[k]];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(2, 2, [(0, 1, 1.0), (0, 1, 2.0), (1, 0, 3.0)]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn out_of_range_triplet_rejected() {
        assert!(CsrMatrix::from_triplets(2, 2, [(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn matmul_matches_dense() {
        let dense = array![[0.0, 2.0, 0.0], [1.0, 0.0, -1.0]];
        let m = CsrMatrix::from_dense(dense.view());
        let rhs = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(m.matmul(rhs.view()), dense.dot(&rhs));
        let rhs2 = array![[1.0], [2.0]];
        assert_eq!(m.transpose_matmul(rhs2.view()), dense.t().dot(&rhs2));
        assert_eq!(m.transpose().to_dense(), dense.t().to_owned());
    }

    #[test]
    fn explicit_zero_is_structural() {
        let m = CsrMatrix::from_triplets(2, 2, [(0, 1, 0.0), (1, 0, 0.0)]).unwrap();
        assert!(m.contains(0, 1));
        assert!(!m.contains(0, 0));
        assert_eq!(m.max_asymmetry(), Some(0.0));
    }
}
