//! Learned graph structures and the skip-connection blend.
//!
//! The top-k edge selection is treated as constant for the current
//! step (it is piecewise constant in the parameters), while the kept
//! edge values remain differentiable functions of the transform
//! parameters through the cosine similarities and the degree
//! normalization.

use crate::error::{Error, Result};
use crate::graph::knn::select_topk_edges;
use crate::graph::{GraphStage, ModalityGraph};
use crate::numerics::{BlendPlan, CsrStructure, DenseMatrix, NodeId, SparseMatrix, Tape};
use crate::scalar::Scalar;
use std::sync::Arc;

/// A graph whose edge values live on the autodiff tape.
#[derive(Clone)]
pub struct TapedGraph {
    pub structure: Arc<CsrStructure>,
    /// `nnz x 1` node of edge values.
    pub values: NodeId,
    pub stage: GraphStage,
}

/// Affine feature transform `e W^T + b`, rowwise.
pub fn transform_features<T: Scalar>(
    tape: &mut Tape<T>,
    features: NodeId,
    weight: NodeId,
    bias: NodeId,
) -> Result<NodeId> {
    let projected = tape.matmul_nt(features, weight)?;
    tape.add_row_broadcast(projected, bias)
}

/// Repeats the kNN pipeline over transformed features with gradient
/// flow through the kept edges. Returns the normalized learned graph
/// and the number of zero-norm rows that dropped out this step.
pub fn build_learned_graph<T: Scalar>(
    tape: &mut Tape<T>,
    transformed: NodeId,
    k: usize,
    keep_self_loops: bool,
) -> Result<(TapedGraph, usize)> {
    let feats = tape.value(transformed);
    let n = feats.rows();
    let (entries, dropped) = select_topk_edges(feats, k, keep_self_loops, true)?;

    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::new();
    indptr.push(0);
    for row in &entries {
        indices.extend(row.iter().map(|&(c, _)| c));
        indptr.push(indices.len());
    }
    let structure = Arc::new(CsrStructure::new(n, n, indptr, indices)?);

    let raw_values = tape.cosine_pairs(transformed, structure.clone())?;
    let normalized = tape.edge_normalize(raw_values, structure.clone())?;
    Ok((
        TapedGraph {
            structure,
            values: normalized,
            stage: GraphStage::Learned,
        },
        dropped,
    ))
}

/// Builds the edge-set union plan for `lambda * initial +
/// (1 - lambda) * learned`.
pub fn build_blend_plan<T: Scalar>(
    initial: &SparseMatrix<T>,
    learned: &Arc<CsrStructure>,
    lambda: T,
) -> Result<Arc<BlendPlan<T>>> {
    check_lambda(lambda)?;
    let n = initial.rows();
    if learned.rows != n || learned.cols != initial.cols() {
        return Err(Error::ShapeMismatch {
            context: "blend_graphs",
            left_rows: n,
            left_cols: initial.cols(),
            right_rows: learned.rows,
            right_cols: learned.cols,
        });
    }
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::new();
    let mut base = Vec::new();
    let mut learned_map = Vec::new();
    indptr.push(0);
    for i in 0..n {
        let (init_cols, init_vals) = initial.row_entries(i);
        let learned_range = learned.row_range(i);
        let learned_cols = &learned.indices[learned_range.clone()];
        let mut a = 0usize;
        let mut b = 0usize;
        while a < init_cols.len() || b < learned_cols.len() {
            let take_init = match (init_cols.get(a), learned_cols.get(b)) {
                (Some(&ci), Some(&cl)) if ci == cl => {
                    indices.push(ci);
                    base.push(lambda * init_vals[a]);
                    learned_map.push(Some(learned_range.start + b));
                    a += 1;
                    b += 1;
                    continue;
                }
                (Some(&ci), Some(&cl)) => ci < cl,
                (Some(_), None) => true,
                (None, _) => false,
            };
            if take_init {
                indices.push(init_cols[a]);
                base.push(lambda * init_vals[a]);
                learned_map.push(None);
                a += 1;
            } else {
                indices.push(learned_cols[b]);
                base.push(T::zero());
                learned_map.push(Some(learned_range.start + b));
                b += 1;
            }
        }
        indptr.push(indices.len());
    }
    let structure = Arc::new(CsrStructure::new(n, initial.cols(), indptr, indices)?);
    Ok(Arc::new(BlendPlan {
        structure,
        base,
        learned_map,
        learned_weight: T::one() - lambda,
    }))
}

/// Applies a blend plan on the tape; gradient flows only through the
/// learned side.
pub fn blend_taped<T: Scalar>(
    tape: &mut Tape<T>,
    plan: Arc<BlendPlan<T>>,
    learned_values: NodeId,
) -> TapedGraph {
    let values = tape.blend_edges(learned_values, plan.clone());
    TapedGraph {
        structure: plan.structure.clone(),
        values,
        stage: GraphStage::Blended,
    }
}

/// Value-level skip-connection blend of two normalized graphs. The
/// endpoints return the corresponding input exactly.
pub fn blend_graphs<T: Scalar>(
    initial: &ModalityGraph<T>,
    learned: &ModalityGraph<T>,
    lambda: T,
) -> Result<ModalityGraph<T>> {
    check_lambda(lambda)?;
    let adjacency = if lambda == T::one() {
        initial.adjacency.clone()
    } else if lambda == T::zero() {
        learned.adjacency.clone()
    } else {
        let plan = build_blend_plan(&initial.adjacency, learned.adjacency.structure(), lambda)?;
        let mut values = plan.base.clone();
        for (e, slot) in plan.learned_map.iter().enumerate() {
            if let Some(le) = slot {
                values[e] += plan.learned_weight * learned.adjacency.values()[*le];
            }
        }
        SparseMatrix::new(plan.structure.clone(), values)?
    };
    Ok(ModalityGraph {
        modality: initial.modality.clone(),
        stage: GraphStage::Blended,
        adjacency,
    })
}

fn check_lambda<T: Scalar>(lambda: T) -> Result<()> {
    if lambda < T::zero() || lambda > T::one() {
        return Err(Error::Config(format!(
            "skip-connection coefficient {lambda} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Value-only learned graph for inference: same pipeline as
/// [`build_learned_graph`] without a tape.
pub fn learned_graph_values<T: Scalar>(
    transformed: &DenseMatrix<T>,
    k: usize,
    keep_self_loops: bool,
) -> Result<SparseMatrix<T>> {
    let mut tape = Tape::new();
    let node = tape.leaf(transformed.clone());
    let (graph, _) = build_learned_graph(&mut tape, node, k, keep_self_loops)?;
    SparseMatrix::new(graph.structure.clone(), tape.value(graph.values).data().to_vec())
}
