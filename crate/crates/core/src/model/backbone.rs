//! Collaborative-filtering backbones over train interactions.

use crate::dataset::SplitIndex;
use crate::error::Result;
use crate::numerics::{NodeId, SparseMatrix, Tape};
use crate::scalar::Scalar;
use std::sync::Arc;

/// Symmetric-normalized user-item adjacency in block form: `user_item`
/// is the U x N block of `D^{-1/2} A D^{-1/2}` and `item_user` its
/// transpose, so one propagation layer is two rectangular products.
#[derive(Clone, Debug)]
pub struct BipartiteAdj<T> {
    pub user_item: Arc<SparseMatrix<T>>,
    pub item_user: Arc<SparseMatrix<T>>,
}

impl<T: Scalar> BipartiteAdj<T> {
    /// Builds from train-tagged interactions. Users or items without
    /// training interactions get empty rows and keep their input
    /// embeddings unchanged through propagation.
    pub fn build(index: &SplitIndex) -> Result<Self> {
        let mut user_deg = vec![0usize; index.n_users];
        let mut item_deg = vec![0usize; index.n_items];
        for &(u, i) in &index.train {
            user_deg[u] += 1;
            item_deg[i] += 1;
        }
        let norm = |du: usize, di: usize| {
            T::one() / T::from_f64_lossy(((du * di) as f64).sqrt())
        };

        let mut ui_rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); index.n_users];
        let mut iu_rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); index.n_items];
        for (u, items) in index.per_user_train.iter().enumerate() {
            for &i in items {
                let v = norm(user_deg[u], item_deg[i]);
                ui_rows[u].push((i, v));
                iu_rows[i].push((u, v));
            }
        }
        for row in &mut iu_rows {
            row.sort_by_key(|&(c, _)| c);
        }
        Ok(Self {
            user_item: Arc::new(SparseMatrix::from_rows(index.n_users, index.n_items, &ui_rows)?),
            item_user: Arc::new(SparseMatrix::from_rows(index.n_items, index.n_users, &iu_rows)?),
        })
    }
}

/// LightGCN-style propagation: alternate the bipartite blocks for the
/// configured depth and average the layer outputs uniformly
/// (`1/(K+1)` weights). Zero layers returns the inputs.
pub fn lightgcn_forward<T: Scalar>(
    tape: &mut Tape<T>,
    adj: &BipartiteAdj<T>,
    user_embedding: NodeId,
    item_embedding: NodeId,
    layers: usize,
) -> Result<(NodeId, NodeId)> {
    let mut user_layers = vec![user_embedding];
    let mut item_layers = vec![item_embedding];
    for _ in 0..layers {
        let prev_u = *user_layers.last().unwrap();
        let prev_i = *item_layers.last().unwrap();
        user_layers.push(tape.spmm_const(adj.user_item.clone(), prev_i)?);
        item_layers.push(tape.spmm_const(adj.item_user.clone(), prev_u)?);
    }
    let w = T::one() / T::from_f64_lossy((layers + 1) as f64);
    Ok((
        average_nodes(tape, &user_layers, w)?,
        average_nodes(tape, &item_layers, w)?,
    ))
}

fn average_nodes<T: Scalar>(tape: &mut Tape<T>, nodes: &[NodeId], w: T) -> Result<NodeId> {
    let mut acc = nodes[0];
    for &n in &nodes[1..] {
        acc = tape.add(acc, n)?;
    }
    Ok(tape.scale(acc, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Interaction, InteractionTable, SplitTag};
    use crate::numerics::DenseMatrix;

    fn single_pair_index() -> SplitIndex {
        let table = InteractionTable {
            n_users: 1,
            n_items: 1,
            interactions: vec![Interaction {
                user: 0,
                item: 0,
                tag: SplitTag::Train,
            }],
            user_ids: vec!["u".into()],
            item_ids: vec!["i".into()],
            duplicates_dropped: 0,
        };
        SplitIndex::build(&table)
    }

    #[test]
    fn one_user_one_item_single_layer_matches_hand_computation() {
        // Degrees are 1, the normalized edge is 1, so one layer swaps
        // the embeddings and the layer mean is (x + y) / 2.
        let index = single_pair_index();
        let adj = BipartiteAdj::<f64>::build(&index).unwrap();
        let mut tape = Tape::new();
        let xu = tape.leaf(DenseMatrix::from_rows(&[vec![2.0, 4.0]]).unwrap());
        let xi = tape.leaf(DenseMatrix::from_rows(&[vec![6.0, 8.0]]).unwrap());
        let (u, i) = lightgcn_forward(&mut tape, &adj, xu, xi, 1).unwrap();
        assert_eq!(tape.value(u).data(), &[4.0, 6.0]);
        assert_eq!(tape.value(i).data(), &[4.0, 6.0]);
    }

    #[test]
    fn zero_layers_is_identity() {
        let index = single_pair_index();
        let adj = BipartiteAdj::<f64>::build(&index).unwrap();
        let mut tape = Tape::new();
        let xu = tape.leaf(DenseMatrix::from_rows(&[vec![1.0, -1.0]]).unwrap());
        let xi = tape.leaf(DenseMatrix::from_rows(&[vec![0.5, 0.25]]).unwrap());
        let (u, i) = lightgcn_forward(&mut tape, &adj, xu, xi, 0).unwrap();
        assert_eq!(tape.value(u).data(), &[1.0, -1.0]);
        assert_eq!(tape.value(i).data(), &[0.5, 0.25]);
    }

    #[test]
    fn two_layer_propagation_matches_dense_oracle() {
        // 2 users, 3 items, a small bipartite graph; compare against
        // explicit dense multiplication of the full (U+N) adjacency.
        let table = InteractionTable {
            n_users: 2,
            n_items: 3,
            interactions: vec![
                Interaction { user: 0, item: 0, tag: SplitTag::Train },
                Interaction { user: 0, item: 1, tag: SplitTag::Train },
                Interaction { user: 1, item: 1, tag: SplitTag::Train },
                Interaction { user: 1, item: 2, tag: SplitTag::Train },
            ],
            user_ids: vec!["a".into(), "b".into()],
            item_ids: vec!["x".into(), "y".into(), "z".into()],
            duplicates_dropped: 0,
        };
        let index = SplitIndex::build(&table);
        let adj = BipartiteAdj::<f64>::build(&index).unwrap();

        let d = 2usize;
        let xu = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let xi =
            DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![2.0, -1.0], vec![0.0, 3.0]]).unwrap();

        // Dense reference over the stacked embedding matrix.
        let total = 5usize;
        let mut big = DenseMatrix::<f64>::zeros(total, total);
        let edges = [(0usize, 0usize), (0, 1), (1, 1), (1, 2)];
        for &(u, i) in &edges {
            let du = index.per_user_train[u].len() as f64;
            let di = edges.iter().filter(|&&(_, j)| j == i).count() as f64;
            let v = 1.0 / (du * di).sqrt();
            big[(u, 2 + i)] = v;
            big[(2 + i, u)] = v;
        }
        let mut stacked = DenseMatrix::<f64>::zeros(total, d);
        for u in 0..2 {
            stacked.row_mut(u).copy_from_slice(xu.row(u));
        }
        for i in 0..3 {
            stacked.row_mut(2 + i).copy_from_slice(xi.row(i));
        }
        let l1 = big.matmul(&stacked).unwrap();
        let l2 = big.matmul(&l1).unwrap();
        let mut expect = stacked.clone();
        expect.axpy(1.0, &l1);
        expect.axpy(1.0, &l2);
        let expect = expect.scale(1.0 / 3.0);

        let mut tape = Tape::new();
        let nu = tape.leaf(xu);
        let ni = tape.leaf(xi);
        let (u_out, i_out) = lightgcn_forward(&mut tape, &adj, nu, ni, 2).unwrap();
        for u in 0..2 {
            for c in 0..d {
                assert!((tape.value(u_out)[(u, c)] - expect[(u, c)]).abs() < 1e-12);
            }
        }
        for i in 0..3 {
            for c in 0..d {
                assert!((tape.value(i_out)[(i, c)] - expect[(2 + i, c)]).abs() < 1e-12);
            }
        }
    }
}
