//! Trainable tensors, registered once under stable names.

use crate::dataset::ModalityFeatures;
use crate::error::{Error, Result};
use crate::model::TrainerConfig;
use crate::numerics::{xavier_init_with, DenseMatrix};
use crate::rng::derive_rng;
use crate::scalar::Scalar;

/// Per-modality affine transform of raw features into the embedding
/// space: weight `d x d_m`, bias `1 x d`.
#[derive(Clone, Debug)]
pub struct ModalityTransform<T> {
    pub modality: String,
    pub weight: DenseMatrix<T>,
    pub bias: DenseMatrix<T>,
}

/// Attention parameters shared across modalities: query `1 x d`,
/// weight `d x d`, bias `1 x d`.
#[derive(Clone, Debug)]
pub struct AttentionWeights<T> {
    pub query: DenseMatrix<T>,
    pub weight: DenseMatrix<T>,
    pub bias: DenseMatrix<T>,
}

/// All trainable state of one model. The set of allocated tensors
/// depends on the wiring (a plain backbone has no multimodal
/// parameters); every allocated tensor appears exactly once in
/// [`ModelParams::tensors`].
#[derive(Clone, Debug)]
pub struct ModelParams<T> {
    pub user_embedding: DenseMatrix<T>,
    pub item_embedding: DenseMatrix<T>,
    pub transforms: Vec<ModalityTransform<T>>,
    pub attention: Option<AttentionWeights<T>>,
    /// Separate propagation input table when not sharing the backbone
    /// item embeddings.
    pub propagation_table: Option<DenseMatrix<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Xavier-initializes every tensor the wiring needs. Each tensor
    /// draws from its own seed stream, so registration order does not
    /// influence the values.
    pub fn init(
        config: &TrainerConfig,
        n_users: usize,
        n_items: usize,
        features: &[ModalityFeatures<T>],
    ) -> Result<Self> {
        let d = config.embedding_dim;
        let seed = config.seed;
        let init = |name: &str, rows: usize, cols: usize| -> Result<DenseMatrix<T>> {
            let mut rng = derive_rng(seed, &format!("init.{name}"));
            xavier_init_with(rows, cols, &mut rng)
        };

        let user_embedding = init("user_embedding", n_users, d)?;
        let item_embedding = init("item_embedding", n_items, d)?;

        let mut transforms = Vec::new();
        let mut attention = None;
        let mut propagation_table = None;
        if config.uses_multimodal() {
            for f in features {
                transforms.push(ModalityTransform {
                    modality: f.name.clone(),
                    weight: init(&format!("transform.{}.weight", f.name), d, f.matrix.cols())?,
                    bias: init(&format!("transform.{}.bias", f.name), 1, d)?,
                });
            }
            attention = Some(AttentionWeights {
                query: init("attention.query", 1, d)?,
                weight: init("attention.weight", d, d)?,
                bias: init("attention.bias", 1, d)?,
            });
            if config.separate_item_table && config.uses_graphs() && !config.micro_over_feats {
                propagation_table = Some(init("propagation_table", n_items, d)?);
            }
        }

        Ok(Self {
            user_embedding,
            item_embedding,
            transforms,
            attention,
            propagation_table,
        })
    }

    /// Named views of every trainable tensor, in registration order.
    pub fn tensors(&self) -> Vec<(String, &DenseMatrix<T>)> {
        let mut out: Vec<(String, &DenseMatrix<T>)> = vec![
            ("user_embedding".into(), &self.user_embedding),
            ("item_embedding".into(), &self.item_embedding),
        ];
        for t in &self.transforms {
            out.push((format!("transform.{}.weight", t.modality), &t.weight));
            out.push((format!("transform.{}.bias", t.modality), &t.bias));
        }
        if let Some(a) = &self.attention {
            out.push(("attention.query".into(), &a.query));
            out.push(("attention.weight".into(), &a.weight));
            out.push(("attention.bias".into(), &a.bias));
        }
        if let Some(p) = &self.propagation_table {
            out.push(("propagation_table".into(), p));
        }
        out
    }

    /// Mutable counterpart of [`Self::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut DenseMatrix<T>)> {
        let mut out: Vec<(String, &mut DenseMatrix<T>)> = vec![
            ("user_embedding".into(), &mut self.user_embedding),
            ("item_embedding".into(), &mut self.item_embedding),
        ];
        for t in &mut self.transforms {
            out.push((format!("transform.{}.weight", t.modality), &mut t.weight));
            out.push((format!("transform.{}.bias", t.modality), &mut t.bias));
        }
        if let Some(a) = &mut self.attention {
            out.push(("attention.query".into(), &mut a.query));
            out.push(("attention.weight".into(), &mut a.weight));
            out.push(("attention.bias".into(), &mut a.bias));
        }
        if let Some(p) = &mut self.propagation_table {
            out.push(("propagation_table".into(), p));
        }
        out
    }

    /// Rebuilds params from named tensors (checkpoint loading).
    pub fn from_tensors(
        mut named: std::collections::BTreeMap<String, DenseMatrix<T>>,
        modality_order: &[String],
    ) -> Result<Self> {
        fn take<T>(
            named: &mut std::collections::BTreeMap<String, DenseMatrix<T>>,
            name: &str,
        ) -> Result<DenseMatrix<T>> {
            named
                .remove(name)
                .ok_or_else(|| Error::IncompatibleCheckpoint(format!("missing tensor `{name}`")))
        }
        let user_embedding = take(&mut named, "user_embedding")?;
        let item_embedding = take(&mut named, "item_embedding")?;
        let mut transforms = Vec::new();
        for m in modality_order {
            let weight_name = format!("transform.{m}.weight");
            if named.contains_key(&weight_name) {
                transforms.push(ModalityTransform {
                    modality: m.clone(),
                    weight: take(&mut named, &weight_name)?,
                    bias: take(&mut named, &format!("transform.{m}.bias"))?,
                });
            }
        }
        let attention = if named.contains_key("attention.query") {
            Some(AttentionWeights {
                query: take(&mut named, "attention.query")?,
                weight: take(&mut named, "attention.weight")?,
                bias: take(&mut named, "attention.bias")?,
            })
        } else {
            None
        };
        let propagation_table = if named.contains_key("propagation_table") {
            Some(take(&mut named, "propagation_table")?)
        } else {
            None
        };
        if let Some(stray) = named.keys().next() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "unexpected tensor `{stray}`"
            )));
        }
        Ok(Self {
            user_embedding,
            item_embedding,
            transforms,
            attention,
            propagation_table,
        })
    }
}
