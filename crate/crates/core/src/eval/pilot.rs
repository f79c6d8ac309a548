//! Pilot statistics: co-interacted vs all-pairs similarity, and the
//! proportion of users buying mutually top-k-similar items.

use crate::dataset::{InteractionTable, ModalityFeatures};
use crate::error::Result;
use crate::numerics::dense::dot;
use crate::numerics::DenseMatrix;
use crate::rng::derive_rng;
use crate::scalar::Scalar;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Above this item count the all-pairs mean is estimated from a
/// uniform sample of pairs instead of the exact enumeration.
const EXACT_PAIR_LIMIT: usize = 5000;
const PAIR_SAMPLES: usize = 1_000_000;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CointeractionStat {
    pub modality: String,
    pub all_pairs_mean: f64,
    /// `None` when the dataset has no co-interacted pairs.
    pub co_interacted_mean: Option<f64>,
    pub co_interacted_pairs: usize,
}

/// Mean cosine similarity over all unordered item pairs versus over
/// pairs that co-occur in some user's positive set.
pub fn pilot_cointeraction_similarity<T: Scalar>(
    features: &[ModalityFeatures<T>],
    table: &InteractionTable,
) -> Result<Vec<CointeractionStat>> {
    let co_pairs = co_interacted_pairs(table);
    features
        .iter()
        .map(|f| {
            f.validate(table.n_items)?;
            let norms: Vec<T> = (0..f.matrix.rows()).map(|i| f.matrix.row_norm(i)).collect();
            let cos = |i: usize, j: usize| {
                (dot(f.matrix.row(i), f.matrix.row(j)) / (norms[i] * norms[j])).into_f64()
            };

            let n = table.n_items;
            let all_pairs_mean = if n <= EXACT_PAIR_LIMIT {
                let mut sum = 0.0;
                let mut count = 0usize;
                for i in 0..n {
                    for j in (i + 1)..n {
                        sum += cos(i, j);
                        count += 1;
                    }
                }
                sum / count as f64
            } else {
                let mut rng = derive_rng(0, "pilot-pairs");
                let mut sum = 0.0;
                for _ in 0..PAIR_SAMPLES {
                    let i = rng.gen_range(0..n);
                    let j = loop {
                        let j = rng.gen_range(0..n);
                        if j != i {
                            break j;
                        }
                    };
                    sum += cos(i, j);
                }
                sum / PAIR_SAMPLES as f64
            };

            let co_interacted_mean = if co_pairs.is_empty() {
                None
            } else {
                let sum: f64 = co_pairs.iter().map(|&(i, j)| cos(i, j)).sum();
                Some(sum / co_pairs.len() as f64)
            };

            Ok(CointeractionStat {
                modality: f.name.clone(),
                all_pairs_mean,
                co_interacted_mean,
                co_interacted_pairs: co_pairs.len(),
            })
        })
        .collect()
}

/// Deduplicated unordered item pairs sharing at least one user.
fn co_interacted_pairs(table: &InteractionTable) -> BTreeSet<(usize, usize)> {
    let mut pairs = BTreeSet::new();
    for items in table.user_positives() {
        for a in 0..items.len() {
            for b in (a + 1)..items.len() {
                pairs.insert((items[a], items[b]));
            }
        }
    }
    pairs
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimilarPurchaseStat {
    pub modality: String,
    pub k: usize,
    /// Fraction of users (with at least two positives) owning a pair
    /// of mutually top-k-similar items.
    pub proportion: f64,
}

/// Two items count as semantically similar at level k when either is
/// among the k items most similar to the other (diagonal excluded).
/// Users with fewer than two positive items are excluded from the
/// denominator.
pub fn pilot_similar_purchase_proportion<T: Scalar>(
    features: &[ModalityFeatures<T>],
    table: &InteractionTable,
    k_list: &[usize],
) -> Result<Vec<SimilarPurchaseStat>> {
    let n = table.n_items;
    for &k in k_list {
        if k == 0 || k >= n {
            return Err(crate::error::Error::Config(format!(
                "pilot k values must lie in 1..={}, got {k}",
                n - 1
            )));
        }
    }
    let positives = table.user_positives();
    let qualifying_users: Vec<&Vec<usize>> =
        positives.iter().filter(|p| p.len() >= 2).collect();

    let mut stats = Vec::new();
    for f in features {
        f.validate(n)?;
        let norms: Vec<T> = (0..n).map(|i| f.matrix.row_norm(i)).collect();
        // Smallest k at which each user's best pair qualifies.
        let mut min_required: Vec<usize> = Vec::with_capacity(qualifying_users.len());
        for items in &qualifying_users {
            let mut best = usize::MAX;
            for a in 0..items.len() {
                for b in (a + 1)..items.len() {
                    let (i, j) = (items[a], items[b]);
                    let r = neighbor_rank(&f.matrix, &norms, i, j)
                        .min(neighbor_rank(&f.matrix, &norms, j, i));
                    best = best.min(r);
                }
            }
            min_required.push(best);
        }
        for &k in k_list {
            let qualified = min_required.iter().filter(|&&r| r <= k).count();
            let denom = qualifying_users.len().max(1);
            stats.push(SimilarPurchaseStat {
                modality: f.name.clone(),
                k,
                proportion: qualified as f64 / denom as f64,
            });
        }
    }
    Ok(stats)
}

/// 1-based position of `target` in `anchor`'s similarity ranking over
/// all other items (higher similarity first, ties to the lower index).
fn neighbor_rank<T: Scalar>(
    features: &DenseMatrix<T>,
    norms: &[T],
    anchor: usize,
    target: usize,
) -> usize {
    let sim = |j: usize| dot(features.row(anchor), features.row(j)) / (norms[anchor] * norms[j]);
    let target_sim = sim(target);
    let mut rank = 1usize;
    for j in 0..features.rows() {
        if j == anchor || j == target {
            continue;
        }
        let s = sim(j);
        if s > target_sim || (s == target_sim && j < target) {
            rank += 1;
        }
    }
    rank
}
