//! Randomized property tests for the engine's structural invariants.

use micro_core::eval::{ndcg_at_k, precision_at_k, rank_items, recall_at_k};
use micro_core::fusion::{attention_fuse, propagate, AttentionNodes};
use micro_core::graph::{build_initial_graph, build_learned_graph};
use micro_core::numerics::{DenseMatrix, Tape};
use proptest::prelude::*;

type M = DenseMatrix<f64>;

fn finite_matrix(rows: usize, cols: usize) -> impl Strategy<Value = M> {
    proptest::collection::vec(-2.0..2.0f64, rows * cols)
        .prop_map(move |data| M::from_vec(rows, cols, data).unwrap())
}

/// Rows bounded away from zero norm so cosine stays defined.
fn feature_matrix(rows: usize, cols: usize) -> impl Strategy<Value = M> {
    proptest::collection::vec(0.05..2.0f64, rows * cols)
        .prop_map(move |data| M::from_vec(rows, cols, data).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn attention_weights_sum_to_one(
        ha in finite_matrix(5, 3),
        hb in finite_matrix(5, 3),
        q in finite_matrix(1, 3),
        w in finite_matrix(3, 3),
        b in finite_matrix(1, 3),
    ) {
        let mut tape = Tape::new();
        let nodes = [tape.leaf(ha), tape.leaf(hb)];
        let params = AttentionNodes {
            query: tape.leaf(q),
            weight: tape.leaf(w),
            bias: tape.leaf(b),
        };
        let fused = attention_fuse(&mut tape, &nodes, params).unwrap();
        let alpha = tape.value(fused.weights);
        for i in 0..alpha.rows() {
            let sum: f64 = alpha.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for &a in alpha.row(i) {
                prop_assert!(a > 0.0 && a < 1.0);
            }
        }
        // Fused rows are the alpha-weighted combination, elementwise.
        let h0 = tape.value(nodes[0]).clone();
        let h1 = tape.value(nodes[1]).clone();
        let f = tape.value(fused.fused);
        for i in 0..f.rows() {
            for c in 0..f.cols() {
                let expect = alpha[(i, 0)] * h0[(i, c)] + alpha[(i, 1)] * h1[(i, c)];
                prop_assert!((f[(i, c)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_is_shift_invariant(
        logits in finite_matrix(4, 3),
        shift in -5.0..5.0f64,
    ) {
        let mut tape = Tape::new();
        let a = tape.leaf(logits.clone());
        let sm_a = tape.row_softmax(a);
        let shifted = tape.leaf(logits.map(|v| v + shift));
        let sm_b = tape.row_softmax(shifted);
        let diff = tape.value(sm_a).max_abs_diff(tape.value(sm_b));
        prop_assert!(diff < 1e-12);
    }

    #[test]
    fn propagation_is_linear(
        feats in feature_matrix(6, 4),
        h in finite_matrix(6, 3),
        c in 0.1..3.0f64,
        layers in 0usize..3,
    ) {
        let mut tape = Tape::new();
        let f = tape.leaf(feats);
        let (graph, _) = build_learned_graph(&mut tape, f, 3, true).unwrap();
        let h_node = tape.leaf(h.clone());
        let hc_node = tape.leaf(h.scale(c));
        let out = propagate(&mut tape, &graph, h_node, layers).unwrap();
        let out_scaled = propagate(&mut tape, &graph, hc_node, layers).unwrap();
        let expect = tape.value(out).scale(c);
        prop_assert!(expect.max_abs_diff(tape.value(out_scaled)) < 1e-10);
    }

    #[test]
    fn cosine_is_scale_invariant(
        feats in feature_matrix(5, 4),
        row in 0usize..5,
        scale in 0.1..20.0f64,
    ) {
        let base = build_initial_graph(&feats, 3, true).unwrap();
        let mut scaled = feats.clone();
        for v in scaled.row_mut(row) {
            *v *= scale;
        }
        let rescaled = build_initial_graph(&scaled, 3, true).unwrap();
        prop_assert_eq!(base.structure().indices.clone(), rescaled.structure().indices.clone());
        for (a, b) in base.values().iter().zip(rescaled.values()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn critic_symmetry(a in proptest::collection::vec(0.05..2.0f64, 4),
                       b in proptest::collection::vec(0.05..2.0f64, 4)) {
        let cos = |x: &[f64], y: &[f64]| {
            let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
            let nx: f64 = x.iter().map(|p| p * p).sum::<f64>().sqrt();
            let ny: f64 = y.iter().map(|p| p * p).sum::<f64>().sqrt();
            dot / (nx * ny)
        };
        prop_assert_eq!(cos(&a, &b), cos(&b, &a));
    }

    #[test]
    fn unit_enhancement_distance(
        base in finite_matrix(6, 4),
        fused in feature_matrix(6, 4),
    ) {
        let mut tape = Tape::new();
        let item_out = tape.leaf(base);
        let f = tape.leaf(fused);
        let unit = tape.row_l2_normalize(f).unwrap();
        let enhanced = tape.add(item_out, unit).unwrap();
        let x = tape.value(item_out);
        let y = tape.value(enhanced);
        for i in 0..x.rows() {
            let dist: f64 = x
                .row(i)
                .iter()
                .zip(y.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            prop_assert!((dist - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_additivity_in_beta(
        bpr in 0.0..3.0f64,
        contrastive in 0.0..5.0f64,
        beta1 in 0.0..0.5f64,
        beta2 in 0.0..0.5f64,
    ) {
        let total = |beta: f64| bpr + beta * contrastive;
        let lhs = total(beta1) - total(beta2);
        let rhs = (beta1 - beta2) * contrastive;
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn metric_bounds_hold(
        scores in proptest::collection::vec(-1.0..1.0f64, 12),
        test_bits in proptest::collection::vec(any::<bool>(), 12),
        k in 1usize..12,
    ) {
        let test_set: Vec<usize> = test_bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect();
        prop_assume!(!test_set.is_empty());
        let ranked = rank_items(&scores, &[]);
        let top_k = &ranked[..k.min(ranked.len())];
        let r = recall_at_k(top_k, &test_set);
        let p = precision_at_k(top_k, &test_set, k);
        let n = ndcg_at_k(top_k, &test_set, k);
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
        // precision * k never exceeds |test|.
        prop_assert!(p * k as f64 <= test_set.len() as f64 + 1e-12);
    }

    #[test]
    fn ndcg_is_one_exactly_when_test_items_lead(
        perm_seed in 0u64..1000,
        n_test in 1usize..5,
    ) {
        use rand::seq::SliceRandom;
        let n = 10usize;
        let mut rng = micro_core::rng::derive_rng(perm_seed, "prop-ndcg");
        let mut items: Vec<usize> = (0..n).collect();
        items.shuffle(&mut rng);
        let mut test_set: Vec<usize> = items[..n_test].to_vec();
        test_set.sort_unstable();
        // Ranking with test items first: NDCG = 1.
        let mut best: Vec<usize> = items[..n_test].to_vec();
        best.extend_from_slice(&items[n_test..]);
        prop_assert!((ndcg_at_k(&best, &test_set, n) - 1.0).abs() < 1e-12);
        // Ranking with a non-test item first: NDCG < 1.
        if n_test < n {
            let mut worse: Vec<usize> = vec![items[n_test]];
            worse.extend_from_slice(&items[..n_test]);
            worse.extend_from_slice(&items[n_test + 1..]);
            prop_assert!(ndcg_at_k(&worse, &test_set, n) < 1.0);
        }
    }
}
