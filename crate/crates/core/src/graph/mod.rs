//! Modality-aware latent item-graph mining: initial kNN graphs from
//! raw features, learned graphs from transformed features, and the
//! skip-connection blend of the two.

pub mod cache;
pub mod knn;
pub mod learned;

pub use cache::initial_graph_cached;
pub use knn::{
    build_initial_graph, cosine_similarity_block, normalize_symmetric, select_topk_edges,
    sparsify_topk,
};
pub use learned::{
    blend_graphs, blend_taped, build_blend_plan, build_learned_graph, learned_graph_values,
    transform_features, TapedGraph,
};

use crate::numerics::SparseMatrix;

/// Which step of the mining pipeline produced a graph.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum GraphStage {
    /// kNN graph over raw features, fixed per dataset.
    Initial,
    /// kNN graph over transformed features, rebuilt during training.
    Learned,
    /// Convex blend of the two.
    Blended,
}

impl GraphStage {
    pub fn as_byte(self) -> u8 {
        match self {
            GraphStage::Initial => 0,
            GraphStage::Learned => 1,
            GraphStage::Blended => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(GraphStage::Initial),
            1 => Some(GraphStage::Learned),
            2 => Some(GraphStage::Blended),
            _ => None,
        }
    }
}

/// A sparse, normalized item-item adjacency for one modality.
#[derive(Clone, Debug)]
pub struct ModalityGraph<T> {
    pub modality: String,
    pub stage: GraphStage,
    pub adjacency: SparseMatrix<T>,
}
