//! Ranking loss and the combined objective.

use crate::error::{Error, Result};
use crate::numerics::{NodeId, Tape};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Pairwise ranking loss: mean over the batch of
/// `-ln sigmoid(score_pos - score_neg)`, computed through the stable
/// softplus form `softplus(-(pos - neg))`. The mean (rather than the
/// sum) decouples the learning rate from the batch size.
pub fn bpr_loss<T: Scalar>(
    tape: &mut Tape<T>,
    score_pos: NodeId,
    score_neg: NodeId,
) -> Result<NodeId> {
    if tape.value(score_pos).rows() == 0 {
        return Err(Error::Config("BPR loss over an empty batch".into()));
    }
    let diff = tape.sub(score_pos, score_neg)?;
    let neg_diff = tape.neg(diff);
    let per_triple = tape.softplus(neg_diff);
    Ok(tape.mean_all(per_triple))
}

/// `total = bpr + beta * contrastive` on the tape. A missing
/// contrastive node (ablations, beta = 0) leaves the ranking loss
/// untouched.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    bpr: NodeId,
    contrastive: Option<NodeId>,
    beta: T,
) -> Result<NodeId> {
    if beta < T::zero() {
        return Err(Error::Config(format!("beta {beta} must be nonnegative")));
    }
    match contrastive {
        Some(c) if beta > T::zero() => {
            let scaled = tape.scale(c, beta);
            tape.add(bpr, scaled)
        }
        _ => Ok(bpr),
    }
}

/// Loss values and per-parameter-group gradient norms for one step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossReport {
    pub bpr: f64,
    pub contrastive: f64,
    pub total: f64,
    pub beta: f64,
    pub grad_norms: Vec<(String, f64)>,
}

impl LossReport {
    /// The combined objective must decompose exactly.
    pub fn is_consistent(&self) -> bool {
        (self.total - (self.bpr + self.beta * self.contrastive)).abs() <= 1e-12
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DenseMatrix;

    fn col(tape: &mut Tape<f64>, vals: &[f64]) -> NodeId {
        tape.leaf(DenseMatrix::from_vec(vals.len(), 1, vals.to_vec()).unwrap())
    }

    #[test]
    fn equal_scores_give_ln_two() {
        let mut tape = Tape::new();
        let pos = col(&mut tape, &[1.3, -0.4]);
        let neg = col(&mut tape, &[1.3, -0.4]);
        let loss = bpr_loss(&mut tape, pos, neg).unwrap();
        assert!((tape.scalar(loss) - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn large_margin_does_not_overflow() {
        let mut tape = Tape::new();
        let pos = col(&mut tape, &[20.0]);
        let neg = col(&mut tape, &[0.0]);
        let loss = bpr_loss(&mut tape, pos, neg).unwrap();
        let v = tape.scalar(loss);
        assert!(v.is_finite());
        assert!((v - 2.061e-9).abs() < 1e-11, "{v}");
    }

    #[test]
    fn gradient_wrt_positive_score_is_negative_sigmoid_over_batch() {
        let mut tape = Tape::new();
        let pos = col(&mut tape, &[0.7, 0.1]);
        let neg = col(&mut tape, &[0.2, 0.4]);
        let loss = bpr_loss(&mut tape, pos, neg).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(pos).unwrap();
        let batch = 2.0;
        for (k, diff) in [(0usize, 0.5f64), (1, -0.3)] {
            let expected = -crate::numerics::tape::sigmoid(-diff) / batch;
            assert!((g[(k, 0)] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn total_loss_arithmetic() {
        let mut tape = Tape::new();
        let bpr = col(&mut tape, &[0.7]);
        let c = col(&mut tape, &[2.0]);
        let total = total_loss(&mut tape, bpr, Some(c), 0.03).unwrap();
        assert!((tape.scalar(total) - 0.76).abs() < 1e-12);
        let bpr_only = total_loss(&mut tape, bpr, Some(c), 0.0).unwrap();
        assert_eq!(tape.scalar(bpr_only), 0.7);
    }

    #[test]
    fn report_consistency() {
        let report = LossReport {
            bpr: 0.7,
            contrastive: 2.0,
            total: 0.76,
            beta: 0.03,
            grad_norms: vec![],
        };
        assert!(report.is_consistent());
    }
}
