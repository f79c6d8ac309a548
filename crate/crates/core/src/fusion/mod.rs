//! Propagation over the blended graphs, attention fusion across
//! modalities, and the multimodal contrastive auxiliary loss.

use crate::error::{Error, Result};
use crate::graph::TapedGraph;
use crate::numerics::{NodeId, Tape};
use crate::scalar::Scalar;
use std::sync::Arc;

/// Attention parameter node handles: query vector `q` (1 x d), weight
/// `W` (d x d), bias `b` (1 x d), shared across modalities.
#[derive(Copy, Clone, Debug)]
pub struct AttentionNodes {
    pub query: NodeId,
    pub weight: NodeId,
    pub bias: NodeId,
}

/// Outcome of attention fusion: per-item modality weights and the
/// fused embedding matrix.
#[derive(Clone, Debug)]
pub struct FusedEmbeddings {
    /// N x |M| logits, one column per modality.
    pub logits: NodeId,
    /// N x |M| softmax weights.
    pub weights: NodeId,
    /// N x d fused embeddings.
    pub fused: NodeId,
}

/// Parameter-free message propagation `H_(l) = A H_(l-1)` stacked L
/// times; the modality output is the final layer alone.
pub fn propagate<T: Scalar>(
    tape: &mut Tape<T>,
    graph: &TapedGraph,
    item_embeddings: NodeId,
    layers: usize,
) -> Result<NodeId> {
    let mut h = item_embeddings;
    for _ in 0..layers {
        h = tape.spmm_vals(graph.values, graph.structure.clone(), h)?;
    }
    Ok(h)
}

/// Attention fusion over per-modality embeddings: logits via
/// `q^T tanh(W h + b)`, softmax across modalities, convex combination.
pub fn attention_fuse<T: Scalar>(
    tape: &mut Tape<T>,
    modal_embeddings: &[NodeId],
    params: AttentionNodes,
) -> Result<FusedEmbeddings> {
    if modal_embeddings.is_empty() {
        return Err(Error::Config("attention fusion needs at least one modality".into()));
    }
    let mut logit_cols = Vec::with_capacity(modal_embeddings.len());
    for &h in modal_embeddings {
        let projected = tape.matmul_nt(h, params.weight)?;
        let shifted = tape.add_row_broadcast(projected, params.bias)?;
        let activated = tape.tanh(shifted);
        let logit = tape.matmul_nt(activated, params.query)?;
        logit_cols.push(logit);
    }
    let logits = tape.hstack(&logit_cols)?;
    let weights = tape.row_softmax(logits);
    let mut fused: Option<NodeId> = None;
    for (m, &h) in modal_embeddings.iter().enumerate() {
        let alpha = tape.col_extract(weights, m);
        let weighted = tape.scale_rows(h, alpha)?;
        fused = Some(match fused {
            Some(acc) => tape.add(acc, weighted)?,
            None => weighted,
        });
    }
    Ok(FusedEmbeddings {
        logits,
        weights,
        fused: fused.unwrap(),
    })
}

/// Which denominator family the second InfoNCE direction uses. The
/// printed form pairs the modal anchor with fused negatives plus
/// fused-fused pairs; the mirrored reading swaps the anchor roles
/// exactly.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum NegativeReading {
    Printed,
    Mirrored,
}

/// Temperature-scaled contrastive objective between each modality's
/// item representations and the fused ones, averaged over `items`.
///
/// For each anchor direction the positive is the (modal, fused) pair
/// of the same item; negatives run over the other items of the subset
/// in both the anchor's own family and the opposite family. The critic
/// is cosine similarity.
pub fn contrastive_loss<T: Scalar>(
    tape: &mut Tape<T>,
    modal_embeddings: &[NodeId],
    fused: NodeId,
    items: &[usize],
    tau: T,
    reading: NegativeReading,
) -> Result<NodeId> {
    if items.len() < 2 {
        return Err(Error::Config(format!(
            "contrastive loss needs at least 2 items, got {}",
            items.len()
        )));
    }
    if tau <= T::zero() {
        return Err(Error::Config(format!("temperature {tau} must be positive")));
    }
    let subset = Arc::new(items.to_vec());
    let inv_tau = T::one() / tau;

    let fused_rows = tape.gather_rows(fused, subset.clone());
    let fused_unit = tape.row_l2_normalize(fused_rows)?;
    // F[i][j] = exp(cos(fused_i, fused_j) / tau)
    let fused_sim = tape.matmul_nt(fused_unit, fused_unit)?;
    let fused_sim = tape.scale(fused_sim, inv_tau);
    let f_exp = tape.exp(fused_sim);
    let f_rowsum = tape.row_sum(f_exp);
    let f_diag = tape.diag_part(f_exp);

    let mut total: Option<NodeId> = None;
    for &h in modal_embeddings {
        let modal_rows = tape.gather_rows(h, subset.clone());
        let modal_unit = tape.row_l2_normalize(modal_rows)?;
        // P[i][j] = exp(cos(modal_i, fused_j) / tau)
        let cross = tape.matmul_nt(modal_unit, fused_unit)?;
        let cross = tape.scale(cross, inv_tau);
        let p_exp = tape.exp(cross);
        let p_rowsum = tape.row_sum(p_exp);
        let p_diag = tape.diag_part(p_exp);
        // Q[i][j] = exp(cos(modal_i, modal_j) / tau)
        let within = tape.matmul_nt(modal_unit, modal_unit)?;
        let within = tape.scale(within, inv_tau);
        let q_exp = tape.exp(within);
        let q_rowsum = tape.row_sum(q_exp);
        let q_diag = tape.diag_part(q_exp);

        let log_pos = tape.log(p_diag)?;

        // Modal anchor: denominator = P[i,i] + sum_{j != i} (P[i,j] + Q[i,j]).
        let denom_a = {
            let s = tape.add(p_rowsum, q_rowsum)?;
            tape.sub(s, q_diag)?
        };
        let log_denom_a = tape.log(denom_a)?;
        let info_a = tape.sub(log_pos, log_denom_a)?;

        // Fused anchor, printed reading: P[i,i] + sum_{j != i} (P[i,j] + F[i,j]);
        // mirrored reading replaces the modal-vs-fused family with its
        // transpose (fused anchors against modal negatives).
        let denom_b = match reading {
            NegativeReading::Printed => {
                let s = tape.add(p_rowsum, f_rowsum)?;
                tape.sub(s, f_diag)?
            }
            NegativeReading::Mirrored => {
                let p_t = tape.transpose(p_exp);
                let pt_rowsum = tape.row_sum(p_t);
                let s = tape.add(pt_rowsum, f_rowsum)?;
                tape.sub(s, f_diag)?
            }
        };
        let log_denom_b = tape.log(denom_b)?;
        let info_b = tape.sub(log_pos, log_denom_b)?;

        let pair = tape.add(info_a, info_b)?;
        let modal_sum = tape.sum_all(pair);
        total = Some(match total {
            Some(acc) => tape.add(acc, modal_sum)?,
            None => modal_sum,
        });
    }

    let scale = -T::one()
        / (T::from_f64_lossy(2.0)
            * T::from_f64_lossy(items.len() as f64)
            * T::from_f64_lossy(modal_embeddings.len() as f64));
    Ok(tape.scale(total.unwrap(), scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DenseMatrix;

    type M = DenseMatrix<f64>;

    fn attention_params(tape: &mut Tape<f64>, d: usize) -> AttentionNodes {
        let query = tape.leaf(M::from_vec(1, d, vec![0.3; d]).unwrap());
        let weight = tape.leaf(M::identity(d));
        let bias = tape.leaf(M::zeros(1, d));
        AttentionNodes { query, weight, bias }
    }

    #[test]
    fn identical_modalities_get_equal_weights() {
        let mut tape = Tape::new();
        let h = tape.leaf(M::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.3]]).unwrap());
        let params = attention_params(&mut tape, 2);
        let fused = attention_fuse(&mut tape, &[h, h], params).unwrap();
        let w = tape.value(fused.weights);
        for i in 0..2 {
            assert!((w[(i, 0)] - 0.5).abs() < 1e-12);
            assert!((w[(i, 1)] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn single_modality_weight_is_one_and_fused_is_input() {
        let mut tape = Tape::new();
        let h = tape.leaf(M::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let params = attention_params(&mut tape, 2);
        let fused = attention_fuse(&mut tape, &[h], params).unwrap();
        let w = tape.value(fused.weights);
        assert_eq!(w[(0, 0)], 1.0);
        assert_eq!(tape.value(fused.fused), tape.value(h));
    }

    #[test]
    fn zero_query_gives_uniform_weights() {
        let mut tape = Tape::new();
        let ha = tape.leaf(M::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let hb = tape.leaf(M::from_rows(&[vec![0.0, 5.0]]).unwrap());
        let hc = tape.leaf(M::from_rows(&[vec![2.0, -1.0]]).unwrap());
        let query = tape.leaf(M::zeros(1, 2));
        let weight = tape.leaf(M::identity(2));
        let bias = tape.leaf(M::zeros(1, 2));
        let fused = attention_fuse(
            &mut tape,
            &[ha, hb, hc],
            AttentionNodes { query, weight, bias },
        )
        .unwrap();
        let w = tape.value(fused.weights);
        for m in 0..3 {
            assert!((w[(0, m)] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn propagation_identity_and_zero_layers() {
        use crate::graph::{build_learned_graph, GraphStage};
        let mut tape = Tape::new();
        let h = tape.leaf(M::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        // L = 0 returns the input node itself.
        let feats = tape.leaf(M::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let (graph, _) = build_learned_graph(&mut tape, feats, 1, true).unwrap();
        assert_eq!(graph.stage, GraphStage::Learned);
        let out0 = propagate(&mut tape, &graph, h, 0).unwrap();
        assert_eq!(out0, h);
        // Orthogonal features with k=1 keep only self-loops, i.e. the
        // identity graph; any L returns the input values.
        let out3 = propagate(&mut tape, &graph, h, 3).unwrap();
        assert_eq!(tape.value(out3), tape.value(h));
    }

    #[test]
    fn all_identical_embeddings_give_closed_form_loss() {
        // Every critic value is 1, so each InfoNCE term reduces to
        // log(1 / (1 + 2 (n - 1))) independent of tau and modality.
        let n = 4usize;
        let mut tape = Tape::new();
        let row = vec![0.4, -0.2, 0.9];
        let h = tape.leaf(M::from_rows(&vec![row.clone(); n]).unwrap());
        let fused = tape.leaf(M::from_rows(&vec![row; n]).unwrap());
        let items: Vec<usize> = (0..n).collect();
        let loss = contrastive_loss(
            &mut tape,
            &[h, h],
            fused,
            &items,
            0.5,
            NegativeReading::Printed,
        )
        .unwrap();
        let expected = -((1.0f64 / (1.0 + 2.0 * (n as f64 - 1.0))).ln());
        assert!((tape.scalar(loss) - expected).abs() < 1e-10);
    }

    #[test]
    fn subset_below_two_items_rejected() {
        let mut tape = Tape::new();
        let h = tape.leaf(M::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let err = contrastive_loss(&mut tape, &[h], h, &[0], 0.5, NegativeReading::Printed);
        assert!(err.is_err());
    }

    #[test]
    fn zero_norm_embedding_aborts_with_item_index() {
        let mut tape = Tape::new();
        let h = tape.leaf(M::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap());
        let err =
            contrastive_loss(&mut tape, &[h], h, &[0, 1], 0.5, NegativeReading::Printed)
                .unwrap_err();
        assert!(matches!(err, Error::ZeroNormEmbedding { item: 1 }));
    }
}
