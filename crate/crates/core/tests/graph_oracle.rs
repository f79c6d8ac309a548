//! Dense brute-force reference for the graph mining pipeline.
//!
//! The oracle recomputes everything from scratch on dense matrices:
//! all pairwise cosine similarities, negative suppression, per-row
//! top-k with the lower-index tie rule, row-sum degrees, symmetric
//! normalization, and the convex blend. The engine's sparse pipeline
//! must match it elementwise.

use micro_core::graph::{blend_graphs, build_initial_graph, GraphStage, ModalityGraph};
use micro_core::numerics::DenseMatrix;
use micro_core::rng::derive_rng;
use rand::Rng;

type M = DenseMatrix<f64>;

/// Dense reference: returns the normalized adjacency as a dense
/// matrix. Independent of the engine's sparse code path.
fn dense_reference(features: &M, k: usize, keep_diag: bool) -> M {
    let n = features.rows();
    let norm = |i: usize| -> f64 {
        features.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()
    };
    let mut sims = M::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = features
                .row(i)
                .iter()
                .zip(features.row(j))
                .map(|(a, b)| a * b)
                .sum();
            sims[(i, j)] = dot / (norm(i) * norm(j));
        }
    }
    // Suppress negatives, keep top-k positive entries per row.
    let mut kept = M::zeros(n, n);
    for i in 0..n {
        let mut candidates: Vec<(usize, f64)> = (0..n)
            .filter(|&j| sims[(i, j)] > 0.0 && (keep_diag || j != i))
            .map(|j| (j, sims[(i, j)]))
            .collect();
        candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for &(j, v) in candidates.iter().take(k) {
            kept[(i, j)] = v;
        }
    }
    // Row-sum degrees on both sides.
    let deg: Vec<f64> = (0..n).map(|i| kept.row(i).iter().sum()).collect();
    let mut out = M::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if kept[(i, j)] != 0.0 {
                out[(i, j)] = kept[(i, j)] / (deg[i] * deg[j]).sqrt();
            }
        }
    }
    out
}

fn random_features(n: usize, d: usize, rng: &mut impl Rng) -> M {
    let data: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    M::from_vec(n, d, data).unwrap()
}

#[test]
fn pipeline_matches_dense_reference_on_random_instances() {
    let mut rng = derive_rng(42, "graph-oracle");
    for trial in 0..50 {
        let n = rng.gen_range(2..=64);
        let d = rng.gen_range(2..=16);
        let k = rng.gen_range(1..=n);
        let keep_diag = trial % 2 == 0;
        let features = random_features(n, d, &mut rng);

        let engine = build_initial_graph(&features, k, keep_diag).unwrap();
        let reference = dense_reference(&features, k, keep_diag);
        let dense = engine.densify();
        assert!(
            dense.max_abs_diff(&reference) < 1e-12,
            "trial {trial}: n={n} d={d} k={k} diff={}",
            dense.max_abs_diff(&reference)
        );

        // Row-occupancy bound: at most k kept entries per row (the
        // self-loop consumes one of the k slots when kept).
        for i in 0..n {
            assert!(engine.row_entries(i).0.len() <= k + 1);
        }
        // All values finite and nonnegative at every stage.
        assert!(engine.values().iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}

#[test]
fn blended_graph_matches_dense_blend() {
    let mut rng = derive_rng(43, "graph-oracle");
    for _ in 0..20 {
        let n = rng.gen_range(3..=32);
        let d = rng.gen_range(2..=8);
        let k = rng.gen_range(1..=n.min(6));
        let lambda = rng.gen_range(0.05..0.95);
        let feats_a = random_features(n, d, &mut rng);
        let feats_b = random_features(n, d, &mut rng);

        let initial = ModalityGraph {
            modality: "m".into(),
            stage: GraphStage::Initial,
            adjacency: build_initial_graph(&feats_a, k, true).unwrap(),
        };
        let learned = ModalityGraph {
            modality: "m".into(),
            stage: GraphStage::Learned,
            adjacency: build_initial_graph(&feats_b, k, true).unwrap(),
        };
        let blended = blend_graphs(&initial, &learned, lambda).unwrap();

        let ref_a = dense_reference(&feats_a, k, true);
        let ref_b = dense_reference(&feats_b, k, true);
        let mut expected = ref_a.scale(lambda);
        expected.axpy(1.0 - lambda, &ref_b);
        assert!(blended.adjacency.densify().max_abs_diff(&expected) < 1e-12);

        // Convex combination of normalized graphs: row sums bounded by
        // the blend of the inputs' row sums.
        let sums = blended.adjacency.row_sums();
        let sums_a = initial.adjacency.row_sums();
        let sums_b = learned.adjacency.row_sums();
        for i in 0..n {
            let bound = lambda * sums_a[i] + (1.0 - lambda) * sums_b[i];
            assert!(sums[i] <= bound + 1e-12);
        }
    }
}

#[test]
fn four_item_hand_instance_matches_oracle() {
    let features = M::from_rows(&[
        vec![1.0, 0.2, 0.0],
        vec![0.9, 0.3, 0.1],
        vec![-0.2, 0.8, 0.5],
        vec![0.1, 0.7, 0.6],
    ])
    .unwrap();
    let engine = build_initial_graph(&features, 2, true).unwrap();
    let reference = dense_reference(&features, 2, true);
    assert!(engine.densify().max_abs_diff(&reference) < 1e-12);
}
