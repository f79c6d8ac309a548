//! CSR sparse matrix for graph adjacencies.

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::scalar::Scalar;
use std::sync::Arc;

/// Sparsity pattern of a CSR matrix, shared between the value vector
/// that lives on the autodiff tape and the kernels that consume it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsrStructure {
    pub rows: usize,
    pub cols: usize,
    /// len rows+1, nondecreasing, last entry = nnz.
    pub indptr: Vec<usize>,
    /// Column index per stored entry; strictly increasing within a row.
    pub indices: Vec<usize>,
    /// Row index per stored entry (derived from `indptr`).
    pub edge_rows: Vec<usize>,
}

impl CsrStructure {
    pub fn new(rows: usize, cols: usize, indptr: Vec<usize>, indices: Vec<usize>) -> Result<Self> {
        if indptr.len() != rows + 1 || indptr[0] != 0 || *indptr.last().unwrap() != indices.len() {
            return Err(Error::Config(format!(
                "bad CSR row pointers: rows={rows}, indptr len={}, nnz={}",
                indptr.len(),
                indices.len()
            )));
        }
        for w in indptr.windows(2) {
            if w[1] < w[0] {
                return Err(Error::Config("CSR row pointers decrease".into()));
            }
        }
        let mut edge_rows = vec![0usize; indices.len()];
        for i in 0..rows {
            for e in indptr[i]..indptr[i + 1] {
                edge_rows[e] = i;
            }
            let row = &indices[indptr[i]..indptr[i + 1]];
            for w in row.windows(2) {
                if w[1] <= w[0] {
                    return Err(Error::Config(format!(
                        "CSR column indices not strictly increasing in row {i}"
                    )));
                }
            }
            if let Some(&last) = row.last() {
                if last >= cols {
                    return Err(Error::Config(format!(
                        "CSR column index {last} out of bounds in row {i}"
                    )));
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            edge_rows,
        })
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.indptr[i]..self.indptr[i + 1]
    }
}

/// CSR sparse matrix; stored values are finite and nonnegative, which
/// matches its use as graph adjacency storage.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix<T> {
    structure: Arc<CsrStructure>,
    values: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    pub fn new(structure: Arc<CsrStructure>, values: Vec<T>) -> Result<Self> {
        if values.len() != structure.nnz() {
            return Err(Error::Config(format!(
                "CSR value count {} != nnz {}",
                values.len(),
                structure.nnz()
            )));
        }
        for (e, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < T::zero() {
                return Err(Error::NegativeValue {
                    row: structure.edge_rows[e],
                    value: v.into_f64(),
                });
            }
        }
        Ok(Self { structure, values })
    }

    /// Builds from per-row `(col, value)` entries; entries within a row
    /// must already be sorted by column.
    pub fn from_rows(rows: usize, cols: usize, entries: &[Vec<(usize, T)>]) -> Result<Self> {
        assert_eq!(entries.len(), rows);
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in entries {
            for &(c, v) in row {
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        let structure = Arc::new(CsrStructure::new(rows, cols, indptr, indices)?);
        Self::new(structure, values)
    }

    pub fn identity(n: usize) -> Self {
        let entries: Vec<Vec<(usize, T)>> = (0..n).map(|i| vec![(i, T::one())]).collect();
        Self::from_rows(n, n, &entries).unwrap()
    }

    pub fn rows(&self) -> usize {
        self.structure.rows
    }

    pub fn cols(&self) -> usize {
        self.structure.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn structure(&self) -> &Arc<CsrStructure> {
        &self.structure
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row_entries(&self, i: usize) -> (&[usize], &[T]) {
        let r = self.structure.row_range(i);
        (&self.structure.indices[r.clone()], &self.values[r])
    }

    /// Row sums (the degree vector used for symmetric normalization).
    pub fn row_sums(&self) -> Vec<T> {
        let mut sums = vec![T::zero(); self.rows()];
        for (e, &v) in self.values.iter().enumerate() {
            sums[self.structure.edge_rows[e]] += v;
        }
        sums
    }

    pub fn densify(&self) -> DenseMatrix<T> {
        let mut out = DenseMatrix::zeros(self.rows(), self.cols());
        for i in 0..self.rows() {
            let (cols, vals) = self.row_entries(i);
            for (&c, &v) in cols.iter().zip(vals.iter()) {
                out[(i, c)] = v;
            }
        }
        out
    }

    /// Sparse-dense product `self * h`. Each output row accumulates its
    /// terms in CSR order, independent of any internal scheduling, so
    /// the result is reproducible.
    pub fn spmm(&self, h: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if self.cols() != h.rows() {
            return Err(Error::ShapeMismatch {
                context: "spmm",
                left_rows: self.rows(),
                left_cols: self.cols(),
                right_rows: h.rows(),
                right_cols: h.cols(),
            });
        }
        let mut out = DenseMatrix::zeros(self.rows(), h.cols());
        spmm_into(&self.structure, &self.values, h, &mut out);
        if !out.is_finite() {
            return Err(Error::NonFinite { context: "spmm" });
        }
        Ok(out)
    }
}

/// Shared spmm kernel: `out += structure(values) * h` with `out`
/// zeroed by the caller. Also used by the autodiff tape.
pub fn spmm_into<T: Scalar>(
    structure: &CsrStructure,
    values: &[T],
    h: &DenseMatrix<T>,
    out: &mut DenseMatrix<T>,
) {
    for i in 0..structure.rows {
        let dst = out.row_mut(i);
        for e in structure.row_range(i) {
            let v = values[e];
            let src = h.row(structure.indices[e]);
            for (d, &s) in dst.iter_mut().zip(src.iter()) {
                *d += v * s;
            }
        }
    }
}
