//! Interaction tables, feature matrices, splits, and sampling.

pub mod io;
pub mod sample;
pub mod split;
pub mod synth;

pub use sample::{TripleBatch, TripleSampler};
pub use split::{make_cold_split, make_warm_split};
pub use synth::{generate_synthetic, SynthSpec};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Split assignment of one interaction.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Valid,
    Test,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub tag: SplitTag,
}

/// User-item positive feedback with split tags and the original id
/// strings retained for reporting. Immutable after construction.
#[derive(Clone, Debug)]
pub struct InteractionTable {
    pub n_users: usize,
    pub n_items: usize,
    pub interactions: Vec<Interaction>,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    /// Count of duplicate (user, item) pairs dropped at load.
    pub duplicates_dropped: usize,
}

impl InteractionTable {
    /// Sorted full positive item set per user, across all split tags.
    pub fn user_positives(&self) -> Vec<Vec<usize>> {
        let mut sets = vec![Vec::new(); self.n_users];
        for it in &self.interactions {
            sets[it.user].push(it.item);
        }
        for s in &mut sets {
            s.sort_unstable();
        }
        sets
    }
}

/// Precomputed per-user views of a tagged table, the shape the trainer
/// and the evaluator consume.
#[derive(Clone, Debug)]
pub struct SplitIndex {
    pub n_users: usize,
    pub n_items: usize,
    /// All train-tagged (user, item) pairs in table order.
    pub train: Vec<(usize, usize)>,
    pub per_user_train: Vec<Vec<usize>>,
    pub per_user_valid: Vec<Vec<usize>>,
    pub per_user_test: Vec<Vec<usize>>,
    /// Sorted union of the above, for negative sampling.
    pub per_user_all: Vec<Vec<usize>>,
}

impl SplitIndex {
    pub fn build(table: &InteractionTable) -> Self {
        let mut idx = SplitIndex {
            n_users: table.n_users,
            n_items: table.n_items,
            train: Vec::new(),
            per_user_train: vec![Vec::new(); table.n_users],
            per_user_valid: vec![Vec::new(); table.n_users],
            per_user_test: vec![Vec::new(); table.n_users],
            per_user_all: vec![Vec::new(); table.n_users],
        };
        for it in &table.interactions {
            match it.tag {
                SplitTag::Train => {
                    idx.train.push((it.user, it.item));
                    idx.per_user_train[it.user].push(it.item);
                }
                SplitTag::Valid => idx.per_user_valid[it.user].push(it.item),
                SplitTag::Test => idx.per_user_test[it.user].push(it.item),
            }
            idx.per_user_all[it.user].push(it.item);
        }
        for u in 0..table.n_users {
            idx.per_user_train[u].sort_unstable();
            idx.per_user_valid[u].sort_unstable();
            idx.per_user_test[u].sort_unstable();
            idx.per_user_all[u].sort_unstable();
        }
        idx
    }

    pub fn positives_for(&self, user: usize, tag: SplitTag) -> &[usize] {
        match tag {
            SplitTag::Train => &self.per_user_train[user],
            SplitTag::Valid => &self.per_user_valid[user],
            SplitTag::Test => &self.per_user_test[user],
        }
    }
}

/// Per-modality item content features: one row per item, row order
/// matching the owning dataset's item index.
#[derive(Clone, Debug)]
pub struct ModalityFeatures<T> {
    pub name: String,
    pub matrix: DenseMatrix<T>,
}

impl<T: Scalar> ModalityFeatures<T> {
    /// Validates the invariants enforced at load: row count matches the
    /// item count and no all-zero rows (zero rows break cosine
    /// similarity and signal data corruption).
    pub fn validate(&self, n_items: usize) -> Result<()> {
        if self.matrix.rows() != n_items {
            return Err(Error::Config(format!(
                "feature matrix `{}` has {} rows but the dataset has {} items",
                self.name,
                self.matrix.rows(),
                n_items
            )));
        }
        for i in 0..self.matrix.rows() {
            if self.matrix.row_norm(i) <= T::zero() {
                return Err(Error::ZeroNormRow { row: i });
            }
        }
        Ok(())
    }
}

/// Split protocol selection.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Warm,
    Cold,
}

/// How interactions are assigned to train/valid/test.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub train_ratio: f64,
    pub valid_ratio: f64,
    pub test_ratio: f64,
    /// Fraction of items removed from training under the cold
    /// protocol, split evenly between valid and test.
    pub cold_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            mode: SplitMode::Warm,
            train_ratio: 0.8,
            valid_ratio: 0.1,
            test_ratio: 0.1,
            cold_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let sum = self.train_ratio + self.valid_ratio + self.test_ratio;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {sum}, not 1")));
        }
        if self.cold_fraction <= 0.0 || self.cold_fraction >= 1.0 {
            return Err(Error::Config(format!(
                "cold fraction {} outside (0, 1)",
                self.cold_fraction
            )));
        }
        Ok(())
    }
}

/// Summary of an applied split, serialized next to run artifacts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitReport {
    pub seed: u64,
    pub spec: SplitSpec,
    pub train_count: usize,
    pub valid_count: usize,
    pub test_count: usize,
    /// Original id strings of the cold items (empty for warm splits).
    pub cold_items: Vec<String>,
    /// Users with too few interactions for the per-user ratios; their
    /// interactions were all assigned to train.
    pub short_users: usize,
}

pub fn split_report(
    table: &InteractionTable,
    spec: &SplitSpec,
    cold: &[usize],
    short_users: usize,
) -> SplitReport {
    let mut counts = [0usize; 3];
    for it in &table.interactions {
        counts[it.tag as usize] += 1;
    }
    SplitReport {
        seed: spec.seed,
        spec: spec.clone(),
        train_count: counts[0],
        valid_count: counts[1],
        test_count: counts[2],
        cold_items: cold.iter().map(|&i| table.item_ids[i].clone()).collect(),
        short_users,
    }
}
