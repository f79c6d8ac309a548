//! Ranking metrics, evaluation protocols, and pilot statistics.

pub mod metrics;
pub mod pilot;

pub use metrics::{
    evaluate, ndcg_at_k, precision_at_k, rank_items, recall_at_k, EpochTag, MetricRecord,
    MetricReport,
};
pub use pilot::{
    pilot_cointeraction_similarity, pilot_similar_purchase_proportion, CointeractionStat,
    SimilarPurchaseStat,
};
