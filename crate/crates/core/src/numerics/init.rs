//! Parameter initialization.

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::rng::derive_rng;
use crate::scalar::Scalar;
use rand::Rng;

/// Xavier (Glorot) uniform initialization: entries drawn from
/// `[-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))]`, deterministic for a
/// given seed.
pub fn xavier_init<T: Scalar>(rows: usize, cols: usize, seed: u64) -> Result<DenseMatrix<T>> {
    let mut rng = derive_rng(seed, "xavier");
    xavier_init_with(rows, cols, &mut rng)
}

/// Xavier initialization drawing from a caller-provided stream.
pub fn xavier_init_with<T: Scalar>(
    rows: usize,
    cols: usize,
    rng: &mut impl Rng,
) -> Result<DenseMatrix<T>> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidDimension {
            context: "xavier_init",
            rows,
            cols,
        });
    }
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<T> = (0..rows * cols)
        .map(|_| {
            let u: f64 = rng.gen(); // [0, 1)
            T::from_f64_lossy(bound * (2.0 * u - 1.0))
        })
        .collect();
    DenseMatrix::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_respect_the_bound() {
        let m = xavier_init::<f64>(64, 64, 3).unwrap();
        let bound = (6.0 / 128.0f64).sqrt();
        assert!((bound - 0.2165).abs() < 1e-4);
        assert!(m.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = xavier_init::<f64>(8, 5, 42).unwrap();
        let b = xavier_init::<f64>(8, 5, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_by_one_within_sqrt3() {
        let m = xavier_init::<f64>(1, 1, 9).unwrap();
        assert!(m[(0, 0)].abs() <= 3.0f64.sqrt());
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(xavier_init::<f64>(0, 4, 1).is_err());
        assert!(xavier_init::<f64>(4, 0, 1).is_err());
    }

    #[test]
    fn sample_mean_is_near_zero() {
        // Standard error of the mean of U(-a, a) over n draws is
        // a / sqrt(3 n); the sample mean must fall within 3 SE.
        let n = 10_000usize;
        let m = xavier_init::<f64>(100, 100, 7).unwrap();
        let mean: f64 = m.data().iter().sum::<f64>() / n as f64;
        let bound = (6.0 / 200.0f64).sqrt();
        let se = bound / (3.0 * n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} vs 3*SE {}", 3.0 * se);
    }
}
