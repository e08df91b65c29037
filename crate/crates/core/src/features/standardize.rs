use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, Split};
use crate::error::{Error, Result};
use crate::linalg;

/// Smallest standard deviation used when dividing; constant columns map to 0.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-dimension z-scoring statistics (population std, floored).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub fitted_on: Split,
    /// Columns whose std was raised to [`STD_FLOOR`].
    #[serde(default)]
    pub floored: Vec<usize>,
}

impl Standardizer {
    pub fn d(&self) -> usize {
        self.mean.len()
    }

    /// Maps standardized values back to raw units.
    pub fn invert(&self, z: &nalgebra::DMatrix<f64>) -> nalgebra::DMatrix<f64> {
        let mut out = z.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col *= self.std[j];
            col.add_scalar_mut(self.mean[j]);
        }
        out
    }
}

/// Fits statistics on a training-split matrix.
pub fn fit_standardizer(m: &FeatureMatrix, split: Split) -> Result<Standardizer> {
    if split != Split::Train {
        return Err(Error::InvalidArgument(format!(
            "standardization statistics must come from the train split, not {split}"
        )));
    }
    let n = m.n() as f64;
    let mean: DVector<f64> = linalg::column_means(m.values());
    let mut std = Vec::with_capacity(m.d());
    let mut floored = Vec::new();
    for (j, col) in m.values().column_iter().enumerate() {
        let var = col.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n;
        let s = var.sqrt();
        if s < STD_FLOOR {
            log::warn!("feature column {j} has (near) zero variance; std floored to {STD_FLOOR}");
            floored.push(j);
            std.push(STD_FLOOR);
        } else {
            std.push(s);
        }
    }
    Ok(Standardizer {
        mean: mean.iter().copied().collect(),
        std,
        fitted_on: split,
        floored,
    })
}

pub fn apply_standardizer(m: &FeatureMatrix, s: &Standardizer) -> Result<FeatureMatrix> {
    if m.d() != s.d() {
        return Err(Error::DimensionMismatch {
            what: "standardizer width",
            expected: s.d(),
            got: m.d(),
        });
    }
    let mut v = m.values().clone();
    for (j, mut col) in v.column_iter_mut().enumerate() {
        col.add_scalar_mut(-s.mean[j]);
        col /= s.std[j];
    }
    m.with_values(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Branch, Level};
    use nalgebra::DMatrix;

    fn fm(rows: usize, cols: usize, data: &[f64]) -> FeatureMatrix {
        FeatureMatrix::from_values(DMatrix::from_row_slice(rows, cols, data), Level::Backbone, Branch::Vlm).unwrap()
    }

    #[test]
    fn two_point_column() {
        let m = fm(2, 1, &[2.0, 4.0]);
        let s = fit_standardizer(&m, Split::Train).unwrap();
        assert_eq!(s.mean, vec![3.0]);
        // population std of {2, 4} is 1
        assert_eq!(s.std, vec![1.0]);
        let z = apply_standardizer(&m, &s).unwrap();
        assert_eq!(z.values().as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_column_is_floored() {
        let m = fm(3, 1, &[5.0, 5.0, 5.0]);
        let s = fit_standardizer(&m, Split::Train).unwrap();
        assert_eq!(s.std, vec![STD_FLOOR]);
        assert_eq!(s.floored, vec![0]);
        let z = apply_standardizer(&m, &s).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn train_mean_row_maps_to_zero() {
        let train = fm(3, 2, &[1.0, 10.0, 2.0, 20.0, 3.0, 60.0]);
        let s = fit_standardizer(&train, Split::Train).unwrap();
        let test = fm(2, 2, &[2.0, 30.0, 2.0, 30.0]);
        let z = apply_standardizer(&test, &s).unwrap();
        assert!(z.values().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn standardized_train_has_unit_moments() {
        let train = fm(4, 2, &[1.0, -3.0, 2.0, 0.5, 7.0, 2.0, -1.0, 4.0]);
        let s = fit_standardizer(&train, Split::Train).unwrap();
        let z = apply_standardizer(&train, &s).unwrap();
        for col in z.values().column_iter() {
            let mean = col.sum() / 4.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
        let back = s.invert(z.values());
        assert!((back - train.values()).norm() < 1e-12);
    }

    #[test]
    fn refuses_non_train_split() {
        let m = fm(2, 1, &[2.0, 4.0]);
        assert!(fit_standardizer(&m, Split::Test).is_err());
    }
}
