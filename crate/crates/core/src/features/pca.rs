use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::linalg;

/// Explained-variance threshold used when none is given.
pub const DEFAULT_ETA: f64 = 0.99;
/// Ridge added to eigenvalues before inverting their square roots.
pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Leading principal directions of a centered matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    /// d x k, orthonormal columns.
    pub components: DMatrix<f64>,
    /// k eigenvalues of the (n-1)-normalised covariance, descending.
    pub eigenvalues: Vec<f64>,
    /// Fraction of total variance carried by the k components.
    pub explained_fraction: f64,
    pub ridge: f64,
}

impl PcaBasis {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn d(&self) -> usize {
        self.components.nrows()
    }

    /// The whitening map P (Lambda + ridge I)^{-1/2}, d x k.
    pub fn whitening_map(&self) -> DMatrix<f64> {
        let mut w = self.components.clone();
        for (j, mut col) in w.column_iter_mut().enumerate() {
            col /= (self.eigenvalues[j] + self.ridge).sqrt();
        }
        w
    }
}

/// Keeps the smallest number of principal components whose cumulative
/// explained variance reaches `eta`. The input is centered internally.
pub fn pca_truncate(m: &FeatureMatrix, eta: f64) -> Result<PcaBasis> {
    pca_truncate_with_ridge(m, eta, DEFAULT_RIDGE)
}

pub fn pca_truncate_with_ridge(m: &FeatureMatrix, eta: f64, ridge: f64) -> Result<PcaBasis> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidArgument(format!("eta must lie in (0, 1], got {eta}")));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidArgument(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    let centered = linalg::center_columns(m.values());
    let cov = linalg::covariance(&centered);
    let (vals, vecs) = linalg::sym_eigen_desc(&cov);
    let vals: Vec<f64> = vals.into_iter().map(|v| v.max(0.0)).collect();
    let total: f64 = vals.iter().sum();
    let scale = vals.first().copied().unwrap_or(0.0);
    if !(total > 0.0) || scale <= f64::EPSILON * cov.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateInput(format!(
            "{} features have zero variance",
            m.branch()
        )));
    }
    let k = select_k(&vals, eta);
    let kept = vals[..k].to_vec();
    Ok(PcaBasis {
        components: vecs.columns(0, k).into_owned(),
        explained_fraction: kept.iter().sum::<f64>() / total,
        eigenvalues: kept,
        ridge,
    })
}

/// Smallest k with cumulative fraction >= eta. A 1e-12 slack absorbs
/// summation round-off so that eta = 1 does not demand numerically-zero
/// trailing eigenvalues.
fn select_k(vals: &[f64], eta: f64) -> usize {
    let total: f64 = vals.iter().sum();
    let mut acc = 0.0;
    for (i, v) in vals.iter().enumerate() {
        acc += v;
        if acc / total >= eta - 1e-12 {
            return i + 1;
        }
    }
    vals.len()
}

/// Projects onto the basis and rescales each direction to unit variance:
/// X P (Lambda + ridge I)^{-1/2}.
pub fn whiten(m: &FeatureMatrix, basis: &PcaBasis) -> Result<FeatureMatrix> {
    if m.d() != basis.d() {
        return Err(Error::DimensionMismatch {
            what: "whitening input width",
            expected: basis.d(),
            got: m.d(),
        });
    }
    m.with_values(m.values() * basis.whitening_map())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{center, Branch, Level};
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    fn fm(rows: usize, cols: usize, data: &[f64]) -> FeatureMatrix {
        FeatureMatrix::from_values(DMatrix::from_row_slice(rows, cols, data), Level::Backbone, Branch::Vlm).unwrap()
    }

    /// Four centered points whose sample covariance is diag(l1, l2).
    fn diag_cov_data(l1: f64, l2: f64) -> FeatureMatrix {
        let a = (3.0 * l1 / 4.0).sqrt();
        let b = (3.0 * l2 / 4.0).sqrt();
        fm(4, 2, &[a, b, -a, b, a, -b, -a, -b])
    }

    #[test]
    fn cumulative_rule_on_nine_one_spectrum() {
        let m = diag_cov_data(9.0, 1.0);
        let b = pca_truncate(&m, 0.89).unwrap();
        assert_eq!(b.k(), 1);
        assert!((b.eigenvalues[0] - 9.0).abs() < 1e-12);
        assert!((b.explained_fraction - 0.9).abs() < 1e-12);
        assert_eq!(pca_truncate(&m, 0.91).unwrap().k(), 2);
    }

    #[test]
    fn isotropic_needs_all_components() {
        let m = fm(6, 3, &[1., 0., 0., -1., 0., 0., 0., 1., 0., 0., -1., 0., 0., 0., 1., 0., 0., -1.]);
        assert_eq!(pca_truncate(&m, 1.0).unwrap().k(), 3);
    }

    #[test]
    fn dominant_direction_gives_one_component() {
        // 199 : 1 spectrum, i.e. 99.5% in the first direction.
        let m = diag_cov_data(199.0, 1.0);
        assert_eq!(pca_truncate(&m, 0.99).unwrap().k(), 1);
    }

    #[test]
    fn rank_zero_is_error() {
        let m = fm(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(pca_truncate(&m, 0.99), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn whitening_gives_identity_covariance() {
        let m = diag_cov_data(4.0, 1.0);
        let b = pca_truncate(&m, 1.0).unwrap();
        let w = whiten(&center(&m), &b).unwrap();
        let cov = linalg::covariance(w.values());
        assert!(linalg::max_abs(&(cov - DMatrix::<f64>::identity(2, 2))) < 1e-6);
    }

    #[test]
    fn already_white_maps_by_rotation() {
        let mut rng = stream(5, Stream::Permutation, 2);
        let raw = linalg::gaussian_matrix(200, 3, &mut rng);
        // exactly whiten the sample first
        let base = center(&FeatureMatrix::from_values(raw, Level::Backbone, Branch::Vlm).unwrap());
        let b0 = pca_truncate_with_ridge(&base, 1.0, 0.0).unwrap();
        let white = whiten(&base, &b0).unwrap();
        let b = pca_truncate(&white, 1.0).unwrap();
        assert!(b.eigenvalues.iter().all(|l| (l - 1.0).abs() < 1e-9));
        let map = b.whitening_map();
        assert!(linalg::identity_defect(&map.tr_mul(&map)) < 1e-6);
    }

    #[test]
    fn tiny_eigenvalue_stays_bounded() {
        let basis = PcaBasis {
            components: DMatrix::identity(2, 2),
            eigenvalues: vec![1.0, 1e-14],
            explained_fraction: 1.0,
            ridge: DEFAULT_RIDGE,
        };
        let m = fm(2, 2, &[1.0, 1.0, -1.0, -1.0]);
        let w = whiten(&m, &basis).unwrap();
        assert!(w.values().iter().all(|v| v.is_finite() && v.abs() < 1e5));
    }

    #[test]
    fn whitening_rejects_width_mismatch() {
        let m = diag_cov_data(4.0, 1.0);
        let b = pca_truncate(&m, 1.0).unwrap();
        let other = fm(2, 3, &[1.0; 6]);
        assert!(matches!(whiten(&other, &b), Err(Error::DimensionMismatch { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn k_is_monotone_in_eta(seed in 0u64..1000, e1 in 0.05f64..1.0, e2 in 0.05f64..1.0) {
            let mut rng = stream(seed, Stream::Permutation, 3);
            let mut raw = linalg::gaussian_matrix(30, 6, &mut rng);
            for (j, mut c) in raw.column_iter_mut().enumerate() { c *= (j + 1) as f64; }
            let m = FeatureMatrix::from_values(raw, Level::Backbone, Branch::Vlm).unwrap();
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(pca_truncate(&m, lo).unwrap().k() <= pca_truncate(&m, hi).unwrap().k());
        }

        #[test]
        fn whitened_covariance_is_identity(seed in 0u64..1000) {
            let mut rng = stream(seed, Stream::Permutation, 4);
            let raw = linalg::gaussian_matrix(40, 4, &mut rng) * linalg::random_orthogonal(4, &mut rng)
                * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 0.5, 0.1]));
            let m = center(&FeatureMatrix::from_values(raw, Level::Backbone, Branch::Vlm).unwrap());
            let b = pca_truncate(&m, 1.0).unwrap();
            prop_assume!(b.eigenvalues.last().copied().unwrap_or(0.0) >= 1e-6);
            let cov = linalg::covariance(whiten(&m, &b).unwrap().values());
            let off = cov.clone() - DMatrix::from_diagonal(&cov.diagonal());
            prop_assert!(linalg::max_abs(&off) <= 1e-5);
            prop_assert!(cov.diagonal().iter().all(|v| (v - 1.0).abs() < 1e-5));
        }
    }
}
