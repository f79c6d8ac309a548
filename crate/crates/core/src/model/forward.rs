//! Assembles the full differentiable forward pass of one step, and
//! the value-only variant used at evaluation time.

use crate::dataset::{ModalityFeatures, TripleBatch};
use crate::error::{Error, Result};
use crate::fusion::{
    attention_fuse, contrastive_loss, propagate, AttentionNodes, FusedEmbeddings, NegativeReading,
};
use crate::graph::{blend_taped, build_blend_plan, build_learned_graph, transform_features, TapedGraph};
use crate::graph::GraphStage;
use crate::model::backbone::{lightgcn_forward, BipartiteAdj};
use crate::model::loss::{bpr_loss, total_loss};
use crate::model::{Backbone, ModelParams, TrainerConfig, Wiring};
use crate::numerics::{CsrStructure, DenseMatrix, NodeId, SparseMatrix, Tape};
use crate::scalar::Scalar;
use std::sync::Arc;

/// Everything the forward pass needs besides the tape.
pub struct ForwardInputs<'a, T> {
    pub params: &'a ModelParams<T>,
    /// Modality features, already restricted to the configured subset.
    pub features: &'a [ModalityFeatures<T>],
    /// Initial graphs aligned with `features` (empty when unused).
    pub initial_graphs: &'a [SparseMatrix<T>],
    pub bipartite: Option<&'a BipartiteAdj<T>>,
    pub config: &'a TrainerConfig,
    /// Frozen learned-graph edge selections (per-epoch refresh
    /// cadence); edge values are still recomputed differentiably.
    pub selection_override: Option<&'a [Arc<CsrStructure>]>,
}

/// Node handles of one assembled forward pass.
pub struct ForwardNodes {
    /// Parameter leaves in registration order.
    pub params: Vec<(String, NodeId)>,
    pub user_out: NodeId,
    pub item_out: NodeId,
    /// Enhanced item embeddings (backbone output plus unit-normalized
    /// fused multimodal embedding; equal to `item_out` for the plain
    /// wiring).
    pub enhanced_items: NodeId,
    pub fused: Option<FusedEmbeddings>,
    /// Final per-modality embeddings entering the fusion.
    pub modal_finals: Vec<NodeId>,
    /// Edge selections used this step, reusable within an epoch.
    pub learned_structures: Vec<Arc<CsrStructure>>,
    /// Zero-norm transformed rows dropped across modalities.
    pub dropped_rows: usize,
}

impl ForwardNodes {
    pub fn param_node(&self, name: &str) -> NodeId {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, id)| id)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }
}

/// Builds user / item / enhanced embeddings on the tape.
pub fn build_embeddings<T: Scalar>(
    tape: &mut Tape<T>,
    inputs: &ForwardInputs<'_, T>,
) -> Result<ForwardNodes> {
    let config = inputs.config;
    let wiring = config.wiring();

    let params: Vec<(String, NodeId)> = inputs
        .params
        .tensors()
        .into_iter()
        .map(|(name, tensor)| (name, tape.leaf(tensor.clone())))
        .collect();
    let node_of = |name: &str| -> NodeId {
        params
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, id)| id)
            .unwrap_or_else(|| panic!("parameter `{name}` not registered"))
    };

    let user_leaf = node_of("user_embedding");
    let item_leaf = node_of("item_embedding");

    // Backbone.
    let (user_out, item_out) = match config.backbone {
        Backbone::Mf => (user_leaf, item_leaf),
        Backbone::Lightgcn => {
            let adj = inputs.bipartite.ok_or_else(|| {
                Error::Config("lightgcn backbone requires the bipartite adjacency".into())
            })?;
            lightgcn_forward(tape, adj, user_leaf, item_leaf, config.lightgcn_layers)?
        }
    };

    // Multimodal branch.
    let mut modal_finals = Vec::new();
    let mut learned_structures = Vec::new();
    let mut dropped_rows = 0usize;
    let mut fused = None;

    if wiring != Wiring::Plain {
        let attention = inputs
            .params
            .attention
            .as_ref()
            .ok_or_else(|| Error::Config("missing attention parameters".into()))?;
        debug_assert!(attention.query.rows() == 1);
        let attn_nodes = AttentionNodes {
            query: node_of("attention.query"),
            weight: node_of("attention.weight"),
            bias: node_of("attention.bias"),
        };

        for (m, feats) in inputs.features.iter().enumerate() {
            let feature_leaf = tape.leaf(feats.matrix.clone());
            let weight = node_of(&format!("transform.{}.weight", feats.name));
            let bias = node_of(&format!("transform.{}.bias", feats.name));
            let transformed = transform_features(tape, feature_leaf, weight, bias)?;

            match wiring {
                Wiring::CfPlusFeats => {
                    modal_finals.push(transformed);
                }
                Wiring::Full | Wiring::MicroOverFeats => {
                    let (learned, dropped) = match inputs.selection_override {
                        Some(structures) => {
                            let structure = structures[m].clone();
                            let raw = tape.cosine_pairs(transformed, structure.clone())?;
                            let values = tape.edge_normalize(raw, structure.clone())?;
                            (
                                TapedGraph {
                                    structure,
                                    values,
                                    stage: GraphStage::Learned,
                                },
                                0,
                            )
                        }
                        None => build_learned_graph(
                            tape,
                            transformed,
                            config.knn_k,
                            config.keep_self_loops,
                        )?,
                    };
                    dropped_rows += dropped;
                    learned_structures.push(learned.structure.clone());

                    let lambda = T::from_f64_lossy(config.lambda);
                    let blended = if config.lambda >= 1.0 {
                        // Pure initial graph; no gradient path to the
                        // transforms through the edges.
                        constant_graph(tape, &inputs.initial_graphs[m])
                    } else {
                        let plan = build_blend_plan(
                            &inputs.initial_graphs[m],
                            &learned.structure,
                            lambda,
                        )?;
                        blend_taped(tape, plan, learned.values)
                    };

                    let h0 = match wiring {
                        Wiring::MicroOverFeats => transformed,
                        _ => match &inputs.params.propagation_table {
                            Some(_) => node_of("propagation_table"),
                            None => item_leaf,
                        },
                    };
                    let h_final = propagate(tape, &blended, h0, config.layers)?;
                    modal_finals.push(h_final);
                }
                Wiring::Plain => unreachable!(),
            }
        }
        fused = Some(attention_fuse(tape, &modal_finals, attn_nodes)?);
    }

    // Enhancement: backbone item embeddings plus the unit-normalized
    // fused multimodal embedding.
    let enhanced_items = match &fused {
        Some(f) => {
            let unit = tape.row_l2_normalize(f.fused)?;
            tape.add(item_out, unit)?
        }
        None => item_out,
    };

    Ok(ForwardNodes {
        params,
        user_out,
        item_out,
        enhanced_items,
        fused,
        modal_finals,
        learned_structures,
        dropped_rows,
    })
}

fn constant_graph<T: Scalar>(tape: &mut Tape<T>, adj: &SparseMatrix<T>) -> TapedGraph {
    let values = tape.leaf(DenseMatrix::from_vec(adj.nnz(), 1, adj.values().to_vec()).unwrap());
    TapedGraph {
        structure: adj.structure().clone(),
        values,
        stage: GraphStage::Blended,
    }
}

/// Forward pass plus loss heads for one training batch.
pub struct StepNodes {
    pub forward: ForwardNodes,
    pub bpr: NodeId,
    pub contrastive: Option<NodeId>,
    pub total: NodeId,
}

pub fn build_training_step<T: Scalar>(
    tape: &mut Tape<T>,
    inputs: &ForwardInputs<'_, T>,
    batch: &TripleBatch,
) -> Result<StepNodes> {
    if batch.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    let forward = build_embeddings(tape, inputs)?;
    let config = inputs.config;

    let users = tape.gather_rows(forward.user_out, Arc::new(batch.users.clone()));
    let pos = tape.gather_rows(forward.enhanced_items, Arc::new(batch.pos.clone()));
    let neg = tape.gather_rows(forward.enhanced_items, Arc::new(batch.neg.clone()));
    let score_pos = tape.rowwise_dot(users, pos)?;
    let score_neg = tape.rowwise_dot(users, neg)?;
    let bpr = bpr_loss(tape, score_pos, score_neg)?;

    let beta = config.effective_beta();
    let contrastive = if beta > 0.0 {
        let fused = forward
            .fused
            .as_ref()
            .ok_or_else(|| Error::Config("contrastive task requires the fused embeddings".into()))?;
        let subset: Vec<usize> = if config.full_catalog_contrast {
            (0..inputs.params.item_embedding.rows()).collect()
        } else {
            batch.unique_items()
        };
        let reading = if config.symmetric_negatives {
            NegativeReading::Mirrored
        } else {
            NegativeReading::Printed
        };
        Some(contrastive_loss(
            tape,
            &forward.modal_finals,
            fused.fused,
            &subset,
            T::from_f64_lossy(config.tau),
            reading,
        )?)
    } else {
        None
    };

    let total = total_loss(tape, bpr, contrastive, T::from_f64_lossy(beta))?;
    Ok(StepNodes {
        forward,
        bpr,
        contrastive,
        total,
    })
}

/// Value-only embeddings for ranking: builds the same forward pass
/// (learned graphs rebuilt from the given parameters) and extracts the
/// user and enhanced item matrices.
pub fn inference_embeddings<T: Scalar>(
    inputs: &ForwardInputs<'_, T>,
) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
    let mut tape = Tape::new();
    let forward = build_embeddings(&mut tape, inputs)?;
    Ok((
        tape.value(forward.user_out).clone(),
        tape.value(forward.enhanced_items).clone(),
    ))
}
