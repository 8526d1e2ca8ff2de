//! Sparse matrices in CSR form and the unordered-pair support used for
//! symmetric adjacency.

use crate::scalar::Scalar;

/// CSR sparse matrix. Column indices are strictly increasing within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix<T> {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    vals: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    /// Builds from (row, col, value) triples; duplicates are rejected.
    pub fn from_triples(n_rows: usize, n_cols: usize, triples: &[(u32, u32, T)]) -> Self {
        let mut counts = vec![0usize; n_rows + 1];
        for &(r, c, v) in triples {
            assert!((r as usize) < n_rows && (c as usize) < n_cols, "index out of range");
            assert!(v.is_finite(), "non-finite sparse value");
            counts[r as usize + 1] += 1;
        }
        for i in 0..n_rows {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts;
        let mut fill = row_ptr.clone();
        let mut col_idx = vec![0u32; triples.len()];
        let mut vals = vec![T::zero(); triples.len()];
        for &(r, c, v) in triples {
            let slot = fill[r as usize];
            col_idx[slot] = c;
            vals[slot] = v;
            fill[r as usize] += 1;
        }
        let mut m = Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            vals,
        };
        m.sort_rows();
        m
    }

    /// Symmetric matrix from unordered pairs: each `(i, j)` with `i < j`
    /// contributes entries `(i, j)` and `(j, i)` with the same weight.
    pub fn symmetric_from_pairs(n: usize, pairs: &[(u32, u32)], weights: &[T]) -> Self {
        assert_eq!(pairs.len(), weights.len(), "one weight per pair");
        let mut triples = Vec::with_capacity(pairs.len() * 2);
        for (&(i, j), &w) in pairs.iter().zip(weights) {
            assert!(i < j, "pairs must be stored with i < j");
            triples.push((i, j, w));
            triples.push((j, i, w));
        }
        Self::from_triples(n, n, &triples)
    }

    pub fn identity(n: usize) -> Self {
        let triples: Vec<(u32, u32, T)> = (0..n as u32).map(|i| (i, i, T::one())).collect();
        Self::from_triples(n, n, &triples)
    }

    fn sort_rows(&mut self) {
        for r in 0..self.n_rows {
            let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
            let mut entries: Vec<(u32, T)> = self.col_idx[lo..hi]
                .iter()
                .copied()
                .zip(self.vals[lo..hi].iter().copied())
                .collect();
            entries.sort_by_key(|e| e.0);
            for w in entries.windows(2) {
                assert!(w[0].0 != w[1].0, "duplicate entry in row {r}");
            }
            for (k, (c, v)) in entries.into_iter().enumerate() {
                self.col_idx[lo + k] = c;
                self.vals[lo + k] = v;
            }
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Entries of one row as parallel (columns, values) slices.
    pub fn row(&self, r: usize) -> (&[u32], &[T]) {
        let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[lo..hi], &self.vals[lo..hi])
    }

    pub fn row_lengths(&self) -> Vec<usize> {
        (0..self.n_rows)
            .map(|r| self.row_ptr[r + 1] - self.row_ptr[r])
            .collect()
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.n_rows)
            .map(|r| self.row(r).1.iter().copied().sum())
            .collect()
    }

    /// Applies `f(row, col, value)` to every stored entry.
    pub fn map_values(&self, f: impl Fn(usize, usize, T) -> T) -> Self {
        let mut out = self.clone();
        for r in 0..self.n_rows {
            let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
            for slot in lo..hi {
                out.vals[slot] = f(r, self.col_idx[slot] as usize, self.vals[slot]);
            }
        }
        out
    }

    /// `self * dense`, writing into a fresh row-major buffer of width `cols`.
    pub fn mul_dense(&self, dense: &[T], cols: usize) -> Vec<T> {
        assert_eq!(dense.len(), self.n_cols * cols, "spmm shape mismatch");
        let mut out = vec![T::zero(); self.n_rows * cols];
        for r in 0..self.n_rows {
            let (cs, vs) = self.row(r);
            let orow = &mut out[r * cols..(r + 1) * cols];
            for (&c, &v) in cs.iter().zip(vs) {
                let drow = &dense[c as usize * cols..(c as usize + 1) * cols];
                for (o, &d) in orow.iter_mut().zip(drow) {
                    *o += v * d;
                }
            }
        }
        out
    }

    /// `self^T * dense`; used by the spmm backward pass.
    pub fn mul_dense_transposed(&self, dense: &[T], cols: usize) -> Vec<T> {
        assert_eq!(dense.len(), self.n_rows * cols, "spmm^T shape mismatch");
        let mut out = vec![T::zero(); self.n_cols * cols];
        for r in 0..self.n_rows {
            let (cs, vs) = self.row(r);
            let drow = &dense[r * cols..(r + 1) * cols];
            for (&c, &v) in cs.iter().zip(vs) {
                let orow = &mut out[c as usize * cols..(c as usize + 1) * cols];
                for (o, &d) in orow.iter_mut().zip(drow) {
                    *o += v * d;
                }
            }
        }
        out
    }
}

/// A fixed set of unordered node pairs `(i, j)`, `i < j`, over `n_nodes`
/// nodes. This is the sparsity support shared by the learnable edge weights
/// and the relaxed views: one value per pair, mirrored on demand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSupport {
    n_nodes: usize,
    pairs: Vec<(u32, u32)>,
}

impl PairSupport {
    pub fn new(n_nodes: usize, pairs: Vec<(u32, u32)>) -> Self {
        for &(i, j) in &pairs {
            assert!(i < j, "support pairs must satisfy i < j");
            assert!((j as usize) < n_nodes, "pair endpoint out of range");
        }
        Self { n_nodes, pairs }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    /// First endpoints of every pair, as gather indices.
    pub fn firsts(&self) -> Vec<usize> {
        self.pairs.iter().map(|&(i, _)| i as usize).collect()
    }

    /// Second endpoints of every pair, as gather indices.
    pub fn seconds(&self) -> Vec<usize> {
        self.pairs.iter().map(|&(_, j)| j as usize).collect()
    }

    /// Symmetric weighted adjacency over this support.
    pub fn to_sparse<T: Scalar>(&self, weights: &[T]) -> SparseMatrix<T> {
        SparseMatrix::symmetric_from_pairs(self.n_nodes, &self.pairs, weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csr_columns_strictly_increase() {
        let m: SparseMatrix<f64> =
            SparseMatrix::from_triples(3, 3, &[(0, 2, 1.0), (0, 1, 2.0), (2, 0, 3.0)]);
        let (cols, vals) = m.row(0);
        assert_eq!(cols, &[1, 2]);
        assert_eq!(vals, &[2.0, 1.0]);
        assert_eq!(m.row(1).0.len(), 0);
    }

    #[test]
    fn symmetric_pairs_mirror() {
        let m: SparseMatrix<f64> = SparseMatrix::symmetric_from_pairs(3, &[(0, 1), (1, 2)], &[0.5, 2.0]);
        assert_eq!(m.nnz(), 4);
        assert_eq!(m.row(1).0, &[0, 2]);
        assert_eq!(m.row(1).1, &[0.5, 2.0]);
    }

    #[test]
    fn identity_spmm_is_identity() {
        let m: SparseMatrix<f64> = SparseMatrix::identity(3);
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(m.mul_dense(&x, 2), x);
    }

    #[test]
    #[should_panic(expected = "duplicate entry")]
    fn duplicate_entries_rejected() {
        let _: SparseMatrix<f64> = SparseMatrix::from_triples(2, 2, &[(0, 1, 1.0), (0, 1, 2.0)]);
    }
}
