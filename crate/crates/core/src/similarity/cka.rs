use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg;

/// Linear CKA between two feature matrices over the same samples.
pub fn linear_cka(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<f64> {
    linear_cka_values(x.values(), y.values())
}

/// ||X~^T Y~||_F^2 / (||X~^T X~||_F ||Y~^T Y~||_F) with column-centered X~, Y~.
pub fn linear_cka_values(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch {
            what: "cka sample count",
            expected: x.nrows(),
            got: y.nrows(),
        });
    }
    if x.nrows() < 2 {
        return Err(Error::TooFewSamples { got: x.nrows(), need: 2 });
    }
    let xc = linalg::center_columns(x);
    let yc = linalg::center_columns(y);
    let xx = xc.tr_mul(&xc).norm();
    let yy = yc.tr_mul(&yc).norm();
    if xx <= f64::MIN_POSITIVE || yy <= f64::MIN_POSITIVE {
        return Err(Error::DegenerateInput("CKA input has zero variance".into()));
    }
    let xy = xc.tr_mul(&yc).norm_squared();
    Ok(xy / (xx * yy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    fn rand(seed: u64, n: usize, d: usize) -> DMatrix<f64> {
        let mut rng = stream(seed, Stream::Permutation, 40);
        linalg::gaussian_matrix(n, d, &mut rng)
    }

    /// Kernel form: <K, L>_F / (||K|| ||L||) with K = H X X^T H, evaluated
    /// with explicit n x n Gram matrices.
    fn cka_gram_oracle(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let n = x.nrows();
        let h = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
        let k = &h * x * x.transpose() * &h;
        let l = &h * y * y.transpose() * &h;
        k.dot(&l) / (k.norm() * l.norm())
    }

    #[test]
    fn self_similarity_is_one() {
        let x = rand(1, 30, 5);
        assert!((linear_cka_values(&x, &x).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rotation_and_scale_invariance() {
        let x = rand(2, 40, 6);
        let mut rng = stream(2, Stream::Permutation, 41);
        let q = linalg::random_orthogonal(6, &mut rng);
        assert!((linear_cka_values(&x, &(&x * q)).unwrap() - 1.0).abs() < 1e-9);
        assert!((linear_cka_values(&x, &(&x * 3.0)).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn matches_gram_matrix_evaluation() {
        let x = rand(3, 50, 8);
        let y = rand(4, 50, 8) + &x * 0.5;
        let a = linear_cka_values(&x, &y).unwrap();
        let b = cka_gram_oracle(&x, &y);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn zero_variance_is_degenerate() {
        let x = DMatrix::from_element(5, 2, 3.0);
        let y = rand(5, 5, 2);
        assert!(matches!(linear_cka_values(&x, &y), Err(Error::DegenerateInput(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn symmetric_and_bounded(seed in 0u64..100_000, dx in 1usize..6, dy in 1usize..6) {
            let x = rand(seed, 20, dx);
            let y = rand(seed + 7, 20, dy);
            let a = linear_cka_values(&x, &y).unwrap();
            let b = linear_cka_values(&y, &x).unwrap();
            prop_assert!((a - b).abs() <= 1e-10);
            prop_assert!((0.0..=1.0 + 1e-9).contains(&a));
        }
    }
}
