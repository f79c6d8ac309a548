//! Initial kNN graph construction from raw features: cosine
//! similarity, negative suppression, per-row top-k, and symmetric
//! degree normalization.

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, SparseMatrix};
use crate::scalar::Scalar;
use std::ops::Range;

/// Default block height for blockwise similarity; the full N x N
/// similarity matrix is never materialized.
pub const SIMILARITY_BLOCK: usize = 128;

/// Cosine similarities of `row_range` against all rows, as a
/// `(range_len x N)` block. Rows must have nonzero norm.
pub fn cosine_similarity_block<T: Scalar>(
    features: &DenseMatrix<T>,
    row_range: Range<usize>,
) -> Result<DenseMatrix<T>> {
    let n = features.rows();
    let norms = row_norms_checked(features)?;
    let mut block = DenseMatrix::zeros(row_range.len(), n);
    for (bi, i) in row_range.enumerate() {
        for j in 0..n {
            block[(bi, j)] =
                crate::numerics::dense::dot(features.row(i), features.row(j)) / (norms[i] * norms[j]);
        }
    }
    Ok(block)
}

fn row_norms_checked<T: Scalar>(features: &DenseMatrix<T>) -> Result<Vec<T>> {
    (0..features.rows())
        .map(|i| {
            let n = features.row_norm(i);
            if n <= T::zero() {
                Err(Error::ZeroNormRow { row: i })
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// Per-row sparsification of a dense similarity block: negatives are
/// suppressed to zero first, then the k largest remaining positive
/// entries are kept, ties broken by lower column index. Rows with
/// fewer than k positive entries keep all of them; `k >= N` therefore
/// keeps every nonnegative entry. The result is directed (no
/// symmetrization).
pub fn sparsify_topk<T: Scalar>(similarity_rows: &DenseMatrix<T>, k: usize) -> Result<SparseMatrix<T>> {
    if k == 0 {
        return Err(Error::Config("top-k sparsification requires k >= 1".into()));
    }
    let entries: Vec<Vec<(usize, T)>> = (0..similarity_rows.rows())
        .map(|i| select_row_topk(similarity_rows.row(i), k, None))
        .collect();
    SparseMatrix::from_rows(similarity_rows.rows(), similarity_rows.cols(), &entries)
}

/// Top-k positive entries of one similarity row, sorted by column.
/// `skip_col` excludes the diagonal when self-loops are disabled.
fn select_row_topk<T: Scalar>(row: &[T], k: usize, skip_col: Option<usize>) -> Vec<(usize, T)> {
    let mut candidates: Vec<(usize, T)> = row
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > T::zero() && Some(j) != skip_col)
        .map(|(j, &v)| (j, v))
        .collect();
    candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    candidates.truncate(k);
    candidates.sort_by_key(|&(j, _)| j);
    candidates
}

/// Symmetric degree normalization: each stored value is divided by
/// `sqrt(deg_i * deg_j)` where degrees are row sums of the input.
/// Rows with degree zero stay empty.
pub fn normalize_symmetric<T: Scalar>(adj: &SparseMatrix<T>) -> Result<SparseMatrix<T>> {
    let deg = adj.row_sums();
    let structure = adj.structure().clone();
    let mut values = Vec::with_capacity(adj.nnz());
    for (e, &v) in adj.values().iter().enumerate() {
        if v == T::zero() {
            values.push(T::zero());
            continue;
        }
        let i = structure.edge_rows[e];
        let j = structure.indices[e];
        if deg[j] <= T::zero() {
            return Err(Error::NonFinite {
                context: "normalize_symmetric: zero-degree endpoint",
            });
        }
        values.push(v / (deg[i] * deg[j]).sqrt());
    }
    SparseMatrix::new(structure, values)
}

/// Full initial-graph pipeline over raw features, computed blockwise.
pub fn build_initial_graph<T: Scalar>(
    features: &DenseMatrix<T>,
    k: usize,
    keep_self_loops: bool,
) -> Result<SparseMatrix<T>> {
    let (entries, dropped) = select_topk_edges(features, k, keep_self_loops, false)?;
    debug_assert_eq!(dropped, 0);
    let raw = SparseMatrix::from_rows(features.rows(), features.rows(), &entries)?;
    normalize_symmetric(&raw)
}

/// Shared selection step: blockwise similarities, suppression, top-k.
/// With `drop_zero_norm` set, zero-norm rows drop out (no in- or
/// out-edges) and are counted instead of rejected; the learned-graph
/// path uses this since a transformed row may collapse mid-training.
pub fn select_topk_edges<T: Scalar>(
    features: &DenseMatrix<T>,
    k: usize,
    keep_self_loops: bool,
    drop_zero_norm: bool,
) -> Result<(Vec<Vec<(usize, T)>>, usize)> {
    if k == 0 {
        return Err(Error::Config("top-k sparsification requires k >= 1".into()));
    }
    let n = features.rows();
    let mut norms = Vec::with_capacity(n);
    let mut dropped = 0usize;
    for i in 0..n {
        let norm = features.row_norm(i);
        if norm <= T::zero() {
            if !drop_zero_norm {
                return Err(Error::ZeroNormRow { row: i });
            }
            dropped += 1;
            norms.push(None);
        } else {
            norms.push(Some(norm));
        }
    }

    let mut entries: Vec<Vec<(usize, T)>> = Vec::with_capacity(n);
    let mut block_start = 0;
    let mut sims = vec![T::zero(); n];
    while block_start < n {
        let block_end = (block_start + SIMILARITY_BLOCK).min(n);
        for i in block_start..block_end {
            let Some(norm_i) = norms[i] else {
                entries.push(Vec::new());
                continue;
            };
            for (j, s) in sims.iter_mut().enumerate() {
                *s = match norms[j] {
                    Some(norm_j) => {
                        crate::numerics::dense::dot(features.row(i), features.row(j))
                            / (norm_i * norm_j)
                    }
                    None => T::neg_infinity(),
                };
            }
            let skip = if keep_self_loops { None } else { Some(i) };
            entries.push(select_row_topk(&sims, k, skip));
        }
        block_start = block_end;
    }
    Ok((entries, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(rows: &[Vec<f64>]) -> DenseMatrix<f64> {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn orthogonal_rows_have_zero_similarity() {
        let f = feats(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let block = cosine_similarity_block(&f, 0..2).unwrap();
        assert_eq!(block[(0, 1)], 0.0);
        assert_eq!(block[(0, 0)], 1.0);
        assert_eq!(block[(1, 1)], 1.0);
    }

    #[test]
    fn hand_evaluated_similarity() {
        let f = feats(&[vec![1.0, 1.0], vec![1.0, 0.0]]);
        let block = cosine_similarity_block(&f, 0..1).unwrap();
        assert!((block[(0, 1)] - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
        assert!((block[(0, 1)] - 0.70711).abs() < 1e-5);
    }

    #[test]
    fn zero_norm_row_aborts_with_index() {
        let f = feats(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        let err = cosine_similarity_block(&f, 0..2).unwrap_err();
        assert!(matches!(err, Error::ZeroNormRow { row: 1 }));
    }

    #[test]
    fn topk_keeps_largest_positive_entries() {
        let sims = feats(&[vec![0.9, 0.2, 0.5, -0.1]]);
        let s = sparsify_topk(&sims, 2).unwrap();
        let (cols, vals) = s.row_entries(0);
        assert_eq!(cols, &[0, 2]);
        assert_eq!(vals, &[0.9, 0.5]);
    }

    #[test]
    fn all_negative_row_becomes_empty() {
        let sims = feats(&[vec![-0.9, -0.2, -0.5]]);
        let s = sparsify_topk(&sims, 2).unwrap();
        assert_eq!(s.row_entries(0).0.len(), 0);
    }

    #[test]
    fn k_at_least_n_keeps_all_positives() {
        let sims = feats(&[vec![0.9, 0.2, 0.5, -0.1]]);
        let s = sparsify_topk(&sims, 4).unwrap();
        assert_eq!(s.row_entries(0).0, &[0, 1, 2]);
    }

    #[test]
    fn ties_break_toward_lower_column() {
        let sims = feats(&[vec![0.5, 0.9, 0.5, 0.5]]);
        let s = sparsify_topk(&sims, 2).unwrap();
        assert_eq!(s.row_entries(0).0, &[0, 1]);
    }

    #[test]
    fn normalization_matches_hand_case() {
        let raw = SparseMatrix::<f64>::from_rows(
            2,
            2,
            &[vec![(0, 1.0), (1, 0.5)], vec![(0, 0.5), (1, 1.0)]],
        )
        .unwrap();
        let n = normalize_symmetric(&raw).unwrap();
        let d = n.densify();
        assert!((d[(0, 0)] - 2.0 / 3.0).abs() < 1e-12);
        assert!((d[(0, 1)] - 1.0 / 3.0).abs() < 1e-12);
        assert!((d[(1, 0)] - 1.0 / 3.0).abs() < 1e-12);
        assert!((d[(1, 1)] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_self_loop_normalizes_to_one() {
        let raw = SparseMatrix::<f64>::from_rows(1, 1, &[vec![(0, 0.37)]]).unwrap();
        let n = normalize_symmetric(&raw).unwrap();
        assert!((n.values()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_matrix_stays_empty() {
        let raw = SparseMatrix::<f64>::from_rows(3, 3, &[vec![], vec![], vec![]]).unwrap();
        let n = normalize_symmetric(&raw).unwrap();
        assert_eq!(n.nnz(), 0);
    }

    #[test]
    fn identical_rows_give_uniform_graph() {
        // All similarities are 1; after normalization each kept edge
        // carries 1/k.
        let rows = vec![vec![2.0, 1.0]; 5];
        let f = feats(&rows);
        let k = 3;
        let g = build_initial_graph(&f, k, true).unwrap();
        for i in 0..5 {
            let (_, vals) = g.row_entries(i);
            assert_eq!(vals.len(), k);
            for &v in vals {
                assert!((v - 1.0 / k as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scale_invariance_of_cosine() {
        let f = feats(&[vec![0.3, -0.2, 0.9], vec![1.0, 0.4, 0.1], vec![-0.5, 0.8, 0.2]]);
        let mut scaled = f.clone();
        for v in scaled.row_mut(1) {
            *v *= 7.5;
        }
        let a = cosine_similarity_block(&f, 0..3).unwrap();
        let b = cosine_similarity_block(&scaled, 0..3).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }
}
