//! Term-enumeration oracle for the contrastive objective.
//!
//! The oracle loops over every anchor, modality, and negative item and
//! assembles each InfoNCE numerator and denominator term literally,
//! with its own cosine and exponential code. Both readings of the
//! fused-anchor denominator are enumerated.

use micro_core::fusion::{attention_fuse, contrastive_loss, AttentionNodes, NegativeReading};
use micro_core::numerics::{DenseMatrix, Tape};
use micro_core::rng::derive_rng;
use rand::Rng;

type M = DenseMatrix<f64>;

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Literal enumeration of the loss over `n` items and the given
/// per-modality and fused embeddings.
fn oracle(modal: &[M], fused: &M, tau: f64, mirrored: bool) -> f64 {
    let n = fused.rows();
    let m_count = modal.len();
    let e = |theta: f64| (theta / tau).exp();

    let mut total = 0.0;
    for i in 0..n {
        let mut per_item = 0.0;
        for hm in modal {
            // Direction 1: modal anchor.
            let numerator = e(cos(hm.row(i), fused.row(i)));
            let mut denom = numerator;
            for j in 0..n {
                if j == i {
                    continue;
                }
                denom += e(cos(hm.row(i), fused.row(j))); // modal vs fused
                denom += e(cos(hm.row(i), hm.row(j))); // modal vs modal
            }
            let info_a = (numerator / denom).ln();

            // Direction 2: fused anchor. The printed form keeps the
            // modal->fused family; the mirrored form swaps the anchor.
            let mut denom_b = numerator;
            for j in 0..n {
                if j == i {
                    continue;
                }
                if mirrored {
                    denom_b += e(cos(fused.row(i), hm.row(j)));
                } else {
                    denom_b += e(cos(hm.row(i), fused.row(j)));
                }
                denom_b += e(cos(fused.row(i), fused.row(j)));
            }
            let info_b = (numerator / denom_b).ln();

            per_item += 0.5 * (info_a + info_b);
        }
        total += per_item / m_count as f64;
    }
    -total / n as f64
}

fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> M {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| {
            // Keep rows away from zero norm.
            let v: f64 = rng.gen_range(-1.0..1.0);
            if v.abs() < 0.05 {
                v + 0.1
            } else {
                v
            }
        })
        .collect();
    M::from_vec(rows, cols, data).unwrap()
}

#[test]
fn loss_matches_term_enumeration() {
    let mut rng = derive_rng(7, "contrastive-oracle");
    for &n in &[2usize, 3, 5] {
        for &tau in &[0.2f64, 0.5, 1.0] {
            for (mirrored, reading) in [
                (false, NegativeReading::Printed),
                (true, NegativeReading::Mirrored),
            ] {
                let d = 4;
                let modal = vec![random_matrix(n, d, &mut rng), random_matrix(n, d, &mut rng)];
                let fused = random_matrix(n, d, &mut rng);

                let mut tape = Tape::new();
                let modal_nodes: Vec<_> = modal.iter().map(|m| tape.leaf(m.clone())).collect();
                let fused_node = tape.leaf(fused.clone());
                let items: Vec<usize> = (0..n).collect();
                let loss = contrastive_loss(&mut tape, &modal_nodes, fused_node, &items, tau, reading)
                    .unwrap();
                let engine = tape.scalar(loss);

                let expected = oracle(&modal, &fused, tau, mirrored);
                assert!(
                    (engine - expected).abs() < 1e-10,
                    "n={n} tau={tau} mirrored={mirrored}: {engine} vs {expected}"
                );
            }
        }
    }
}

#[test]
fn subset_restriction_matches_oracle_on_gathered_rows() {
    // The loss over a subset must equal the oracle over the gathered
    // sub-matrices.
    let mut rng = derive_rng(8, "contrastive-oracle");
    let n = 7;
    let d = 3;
    let modal = vec![random_matrix(n, d, &mut rng)];
    let fused = random_matrix(n, d, &mut rng);
    let subset = vec![1usize, 3, 6];

    let gather = |m: &M| -> M {
        M::from_rows(&subset.iter().map(|&i| m.row(i).to_vec()).collect::<Vec<_>>()).unwrap()
    };
    let expected = oracle(&[gather(&modal[0])], &gather(&fused), 0.5, false);

    let mut tape = Tape::new();
    let modal_nodes: Vec<_> = modal.iter().map(|m| tape.leaf(m.clone())).collect();
    let fused_node = tape.leaf(fused);
    let loss = contrastive_loss(
        &mut tape,
        &modal_nodes,
        fused_node,
        &subset,
        0.5,
        NegativeReading::Printed,
    )
    .unwrap();
    assert!((tape.scalar(loss) - expected).abs() < 1e-10);
}

#[test]
fn loss_decreases_as_fused_aligns_with_modal() {
    // Directional sanity on a 3-item toy: moving the fused embedding
    // of one item toward its modality embedding (along the cosine
    // metric) lowers the loss, all else fixed.
    let modal = vec![
        M::from_rows(&[vec![1.0, 0.1, 0.0], vec![0.0, 1.0, 0.2], vec![0.3, 0.0, 1.0]]).unwrap(),
    ];
    let base_fused =
        M::from_rows(&[vec![0.2, 1.0, 0.1], vec![0.9, 0.1, 0.3], vec![0.4, 0.8, 0.1]]).unwrap();
    let loss_at = |fused: &M| oracle(&modal, fused, 0.5, false);

    let base = loss_at(&base_fused);
    let mut moved = base_fused.clone();
    // Push fused row 0 toward modal row 0.
    for (c, v) in moved.row_mut(0).iter_mut().enumerate() {
        *v = 0.3 * *v + 0.7 * modal[0][(0, c)];
    }
    let better = loss_at(&moved);
    assert!(better < base, "{better} vs {base}");
}

#[test]
fn fused_output_of_attention_feeds_the_loss() {
    // End-to-end shape check over the tape: attention fusion output
    // feeding the contrastive head evaluates and differentiates.
    let mut rng = derive_rng(9, "contrastive-oracle");
    let n = 4;
    let d = 3;
    let mut tape = Tape::new();
    let ha = tape.leaf(random_matrix(n, d, &mut rng));
    let hb = tape.leaf(random_matrix(n, d, &mut rng));
    let params = AttentionNodes {
        query: tape.leaf(random_matrix(1, d, &mut rng)),
        weight: tape.leaf(random_matrix(d, d, &mut rng)),
        bias: tape.leaf(random_matrix(1, d, &mut rng)),
    };
    let fused = attention_fuse(&mut tape, &[ha, hb], params).unwrap();
    let items: Vec<usize> = (0..n).collect();
    let loss = contrastive_loss(
        &mut tape,
        &[ha, hb],
        fused.fused,
        &items,
        0.5,
        NegativeReading::Printed,
    )
    .unwrap();
    let grads = tape.backward(loss).unwrap();
    assert!(grads.get(params.query).is_some());
    assert!(grads.get(ha).is_some());
}
