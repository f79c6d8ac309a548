//! Adam optimizer over named parameter tensors.

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::scalar::Scalar;

/// Adam hyperparameters. The L2 coefficient is applied as an additive
/// penalty on the gradients (`g <- g + weight_decay * theta`) before
/// the moment updates.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// First/second moment accumulators, one pair per parameter tensor,
/// plus the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: Vec<AdamMoments<T>>,
}

#[derive(Clone, Debug)]
pub struct AdamMoments<T> {
    pub name: String,
    pub m: DenseMatrix<T>,
    pub v: DenseMatrix<T>,
}

impl<T: Scalar> AdamState<T> {
    /// Allocates zeroed moments matching the given parameter shapes.
    pub fn new(config: AdamConfig, params: &[(String, &DenseMatrix<T>)]) -> Self {
        let moments = params
            .iter()
            .map(|(name, p)| AdamMoments {
                name: name.clone(),
                m: DenseMatrix::zeros(p.rows(), p.cols()),
                v: DenseMatrix::zeros(p.rows(), p.cols()),
            })
            .collect();
        Self {
            config,
            step: 0,
            moments,
        }
    }

    /// One Adam update over all registered tensors. `params` and
    /// `grads` must be in registration order. Rejects non-finite
    /// gradients with the offending parameter name.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut DenseMatrix<T>)],
        grads: &[DenseMatrix<T>],
    ) -> Result<()> {
        assert_eq!(params.len(), self.moments.len());
        assert_eq!(grads.len(), self.moments.len());
        for ((name, p), g) in params.iter().zip(grads.iter()) {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    context: "adam_step",
                    left_rows: p.rows(),
                    left_cols: p.cols(),
                    right_rows: g.rows(),
                    right_cols: g.cols(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NanGradient { name: name.clone() });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let lr = T::from_f64_lossy(self.config.learning_rate);
        let b1 = T::from_f64_lossy(self.config.beta1);
        let b2 = T::from_f64_lossy(self.config.beta2);
        let eps = T::from_f64_lossy(self.config.epsilon);
        let wd = T::from_f64_lossy(self.config.weight_decay);
        let one = T::one();
        let bias1 = one - b1.powi(t);
        let bias2 = one - b2.powi(t);

        for (((_, p), g), mom) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.moments.iter_mut())
        {
            let pd = p.data_mut();
            let gd = g.data();
            let md = mom.m.data_mut();
            let vd = mom.v.data_mut();
            for k in 0..pd.len() {
                let grad = gd[k] + wd * pd[k];
                md[k] = b1 * md[k] + (one - b1) * grad;
                vd[k] = b2 * vd[k] + (one - b2) * grad * grad;
                let m_hat = md[k] / bias1;
                let v_hat = vd[k] / bias2;
                pd[k] = pd[k] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> DenseMatrix<f64> {
        DenseMatrix::from_vec(1, 1, vec![v]).unwrap()
    }

    fn one_step(theta: f64, grad: f64, config: AdamConfig) -> f64 {
        let mut p = scalar_param(theta);
        let name = "theta".to_string();
        let mut state = AdamState::new(config, &[(name.clone(), &p)]);
        let g = scalar_param(grad);
        state.step(&mut [(name, &mut p)], &[g]).unwrap();
        p[(0, 0)]
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction, the first update is
        // -lr * g / (|g| + eps) which is ~ -lr for any g > eps.
        let config = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let updated = one_step(1.0, 0.1, config);
        assert!((updated - (1.0 - 0.0005)).abs() < 1e-9, "{updated}");
    }

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let config = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let updated = one_step(0.7, 0.0, config);
        assert_eq!(updated, 0.7);
    }

    #[test]
    fn deterministic_given_identical_state() {
        let config = AdamConfig::default();
        let a = one_step(0.3, 0.02, config);
        let b = one_step(0.3, 0.02, config);
        assert_eq!(a, b);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut p = scalar_param(1.0);
        let name = "item_embedding".to_string();
        let mut state = AdamState::new(AdamConfig::default(), &[(name.clone(), &p)]);
        let g = scalar_param(f64::NAN);
        let err = state.step(&mut [(name, &mut p)], &[g]).unwrap_err();
        assert!(err.to_string().contains("item_embedding"));
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let config = AdamConfig {
            weight_decay: 0.1,
            ..AdamConfig::default()
        };
        let updated = one_step(1.0, 0.0, config);
        assert!(updated < 1.0);
    }
}
