//! Top-k ranking metrics and the evaluation protocols.

use crate::dataset::{SplitIndex, SplitMode, SplitTag};
use crate::numerics::DenseMatrix;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Ranks candidate items by descending score, ties broken by lower
/// item index; excluded items never appear.
pub fn rank_items<T: Scalar>(scores: &[T], exclusions: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len())
        .filter(|i| exclusions.binary_search(i).is_err())
        .collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores must be finite")
            .then(a.cmp(&b))
    });
    order
}

/// Fraction of the user's test items recovered in the top-k.
pub fn recall_at_k(top_k: &[usize], test_set: &[usize]) -> f64 {
    if test_set.is_empty() {
        return 0.0;
    }
    hits(top_k, test_set) as f64 / test_set.len() as f64
}

/// Fraction of the top-k that are test items.
pub fn precision_at_k(top_k: &[usize], test_set: &[usize], k: usize) -> f64 {
    hits(top_k, test_set) as f64 / k as f64
}

/// Binary-gain NDCG: DCG with gains `1 / log2(rank + 1)` over the
/// top-k, normalized by the ideal DCG for `min(|test|, k)` items.
pub fn ndcg_at_k(top_k: &[usize], test_set: &[usize], k: usize) -> f64 {
    if test_set.is_empty() {
        return 0.0;
    }
    let dcg: f64 = top_k
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, item)| test_set.binary_search(item).is_ok())
        .map(|(pos, _)| 1.0 / ((pos + 2) as f64).log2())
        .sum();
    let ideal = test_set.len().min(k);
    let idcg: f64 = (0..ideal).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    dcg / idcg
}

fn hits(top_k: &[usize], test_set: &[usize]) -> usize {
    top_k
        .iter()
        .filter(|item| test_set.binary_search(item).is_ok())
        .count()
}

/// Means over evaluated users.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub protocol: SplitMode,
    pub k: usize,
    pub recall: f64,
    pub precision: f64,
    pub ndcg: f64,
    pub users: usize,
}

/// Ranks every user's full candidate set (train positives excluded)
/// against the `target` split and averages the metrics. Users with an
/// empty target set are skipped; under the cold protocol users left
/// with no training interactions are skipped as well, since their
/// embeddings were never updated.
pub fn evaluate<T: Scalar>(
    user_embeddings: &DenseMatrix<T>,
    item_embeddings: &DenseMatrix<T>,
    index: &SplitIndex,
    target: SplitTag,
    protocol: SplitMode,
    k: usize,
) -> MetricReport {
    let mut recall_sum = 0.0;
    let mut precision_sum = 0.0;
    let mut ndcg_sum = 0.0;
    let mut users = 0usize;
    let mut scores = vec![T::zero(); index.n_items];

    for u in 0..index.n_users {
        let test_set = index.positives_for(u, target);
        if test_set.is_empty() {
            continue;
        }
        if protocol == SplitMode::Cold && index.per_user_train[u].is_empty() {
            continue;
        }
        for (i, s) in scores.iter_mut().enumerate() {
            *s = crate::numerics::dense::dot(user_embeddings.row(u), item_embeddings.row(i));
        }
        let ranked = rank_items(&scores, &index.per_user_train[u]);
        let top_k = &ranked[..ranked.len().min(k)];
        recall_sum += recall_at_k(top_k, test_set);
        precision_sum += precision_at_k(top_k, test_set, k);
        ndcg_sum += ndcg_at_k(top_k, test_set, k);
        users += 1;
    }

    let denom = users.max(1) as f64;
    MetricReport {
        protocol,
        k,
        recall: recall_sum / denom,
        precision: precision_sum / denom,
        ndcg: ndcg_sum / denom,
        users,
    }
}

/// Epoch tag of a metric-log record: a numbered epoch or the final
/// post-training evaluation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpochTag {
    Index(usize),
    Label(String),
}

impl EpochTag {
    pub fn final_tag() -> Self {
        EpochTag::Label("final".into())
    }
}

/// One line of the JSON-lines metric log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: EpochTag,
    pub protocol: SplitMode,
    pub k: usize,
    pub recall: f64,
    pub precision: f64,
    pub ndcg: f64,
    pub users: usize,
    pub config_hash: String,
    pub seed: u64,
}

impl MetricRecord {
    pub fn from_report(
        report: &MetricReport,
        epoch: EpochTag,
        config_hash: &str,
        seed: u64,
    ) -> Self {
        Self {
            epoch,
            protocol: report.protocol,
            k: report.k,
            recall: report.recall,
            precision: report.precision,
            ndcg: report.ndcg,
            users: report.users,
            config_hash: config_hash.to_string(),
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_sorts_descending_with_tie_rule() {
        let ranked = rank_items(&[0.1, 0.9, 0.5], &[]);
        assert_eq!(ranked, vec![1, 2, 0]);
        let tied = rank_items(&[0.5, 0.9, 0.5], &[]);
        assert_eq!(tied, vec![1, 0, 2]);
    }

    #[test]
    fn excluded_items_never_appear() {
        let ranked = rank_items(&[0.9, 0.8, 0.7], &[0]);
        assert_eq!(ranked, vec![1, 2]);
    }

    #[test]
    fn recall_and_precision_hand_case() {
        // test = {a, b}; top-20 contains a only.
        let top_k: Vec<usize> = (0..20).map(|i| i + 10).collect(); // 10..29
        let test_set = vec![10, 40];
        assert_eq!(recall_at_k(&top_k, &test_set), 0.5);
        assert_eq!(precision_at_k(&top_k, &test_set, 20), 1.0 / 20.0);
    }

    #[test]
    fn ndcg_closed_forms() {
        // Single test item at rank 1.
        assert_eq!(ndcg_at_k(&[7, 1, 2], &[7], 20), 1.0);
        // Single test item at rank 2: 1 / log2(3).
        let v = ndcg_at_k(&[1, 7, 2], &[7], 20);
        assert!((v - 1.0 / 3.0f64.log2()).abs() < 1e-12);
        assert!((v - 0.63093).abs() < 1e-5);
    }

    #[test]
    fn ndcg_is_one_iff_test_items_on_top() {
        let test_set = vec![2, 5];
        assert_eq!(ndcg_at_k(&[2, 5, 0, 1], &test_set, 4), 1.0);
        assert_eq!(ndcg_at_k(&[5, 2, 0, 1], &test_set, 4), 1.0);
        assert!(ndcg_at_k(&[2, 0, 5, 1], &test_set, 4) < 1.0);
    }
}
