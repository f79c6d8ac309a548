//! CF backbones, multimodal enhancement, losses, and the training
//! loop.

pub mod backbone;
pub mod checkpoint;
pub mod forward;
pub mod loss;
pub mod params;
pub mod trainer;

pub use backbone::BipartiteAdj;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, DatasetMeta};
pub use forward::{build_embeddings, build_training_step, ForwardNodes, StepNodes};
pub use loss::{bpr_loss, total_loss, LossReport};
pub use params::ModelParams;
pub use trainer::{train, TrainOutcome};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Downstream collaborative-filtering backbone.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Mf,
    Lightgcn,
}

impl std::str::FromStr for Backbone {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mf" => Ok(Backbone::Mf),
            "lightgcn" => Ok(Backbone::Lightgcn),
            other => Err(Error::Config(format!("unknown backbone `{other}`"))),
        }
    }
}

/// Numeric precision of a training run. Gradient checks require f64;
/// f32 trades accuracy for speed on larger datasets.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// How the item representations are wired, derived from the ablation
/// flags.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Wiring {
    /// Backbone only, no multimodal module.
    Plain,
    /// Enhancement uses attention-fused transformed features directly;
    /// no graphs, no propagation, no contrastive task.
    CfPlusFeats,
    /// Full pipeline but propagation starts from transformed features
    /// instead of ID embeddings.
    MicroOverFeats,
    /// The full model.
    Full,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub embedding_dim: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    /// Neighbors kept per row during sparsification; 0 disables the
    /// multimodal module entirely (plain backbone).
    pub knn_k: usize,
    /// Skip-connection coefficient toward the initial graph.
    pub lambda: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// Contrastive loss weight.
    pub beta: f64,
    /// Graph convolution depth L.
    pub layers: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub backbone: Backbone,
    pub lightgcn_layers: usize,
    /// Modality subset by name; empty means all provided modalities.
    pub modalities: Vec<String>,
    pub no_contrast: bool,
    pub cf_plus_feats: bool,
    pub micro_over_feats: bool,
    pub plain_cf: bool,
    pub keep_self_loops: bool,
    /// Mirrored reading of the fused-anchor contrastive negatives.
    pub symmetric_negatives: bool,
    /// Give propagation its own item table instead of sharing the
    /// backbone's ID embeddings.
    pub separate_item_table: bool,
    /// Contrast over the whole catalog instead of the items in the
    /// current batch.
    pub full_catalog_contrast: bool,
    /// Recompute the learned-graph edge selection once per epoch
    /// instead of every step (edge values stay per-step).
    pub refresh_selection_per_epoch: bool,
    pub precision: Precision,
    pub eval_k: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 64,
            learning_rate: 0.0005,
            l2: 1e-4,
            batch_size: 1024,
            knn_k: 10,
            lambda: 0.7,
            tau: 0.5,
            beta: 0.03,
            layers: 1,
            patience: 10,
            max_epochs: 200,
            seed: 0,
            backbone: Backbone::Lightgcn,
            lightgcn_layers: 2,
            modalities: Vec::new(),
            no_contrast: false,
            cf_plus_feats: false,
            micro_over_feats: false,
            plain_cf: false,
            keep_self_loops: true,
            symmetric_negatives: false,
            separate_item_table: false,
            full_catalog_contrast: false,
            refresh_selection_per_epoch: false,
            precision: Precision::F64,
            eval_k: 20,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.plain_cf && (self.cf_plus_feats || self.micro_over_feats || self.no_contrast) {
            return Err(Error::Config(
                "plain_cf cannot be combined with other ablation flags".into(),
            ));
        }
        if self.cf_plus_feats && self.micro_over_feats {
            return Err(Error::Config(
                "cf_plus_feats and micro_over_feats are mutually exclusive wirings".into(),
            ));
        }
        if self.embedding_dim == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "embedding_dim, batch_size, and max_epochs must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.tau <= 0.0 {
            return Err(Error::Config(format!("tau {} must be positive", self.tau)));
        }
        if self.beta < 0.0 || self.l2 < 0.0 || self.learning_rate <= 0.0 {
            return Err(Error::Config(
                "beta and l2 must be nonnegative, learning_rate positive".into(),
            ));
        }
        Ok(())
    }

    pub fn wiring(&self) -> Wiring {
        if self.plain_cf || (self.knn_k == 0 && !self.cf_plus_feats) {
            Wiring::Plain
        } else if self.cf_plus_feats {
            Wiring::CfPlusFeats
        } else if self.micro_over_feats {
            Wiring::MicroOverFeats
        } else {
            Wiring::Full
        }
    }

    /// The contrastive weight actually applied: ablations without the
    /// auxiliary task force it to zero.
    pub fn effective_beta(&self) -> f64 {
        match self.wiring() {
            Wiring::Plain | Wiring::CfPlusFeats => 0.0,
            _ if self.no_contrast => 0.0,
            _ => self.beta,
        }
    }

    /// Whether this run mines latent graphs at all.
    pub fn uses_graphs(&self) -> bool {
        matches!(self.wiring(), Wiring::Full | Wiring::MicroOverFeats)
    }

    /// Whether transformed features / attention parameters exist.
    pub fn uses_multimodal(&self) -> bool {
        self.wiring() != Wiring::Plain
    }
}
