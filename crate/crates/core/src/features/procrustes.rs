use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::linalg;

/// Orthogonal map aligning one feature space onto another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalMap {
    pub q: DMatrix<f64>,
    /// ||source q - reference||_F after alignment.
    pub residual: f64,
}

impl OrthogonalMap {
    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        if m.d() != self.q.nrows() {
            return Err(Error::DimensionMismatch {
                what: "procrustes input width",
                expected: self.q.nrows(),
                got: m.d(),
            });
        }
        m.with_values(m.values() * &self.q)
    }
}

/// Orthogonal Procrustes: the q minimising ||source q - reference||_F over
/// orthogonal matrices is U V^T from the SVD source^T reference = U S V^T.
/// Orientation only; both inputs are expected to be centered already.
pub fn procrustes(source: &FeatureMatrix, reference: &FeatureMatrix) -> Result<OrthogonalMap> {
    if source.d() != reference.d() {
        return Err(Error::DimensionMismatch {
            what: "procrustes feature width",
            expected: reference.d(),
            got: source.d(),
        });
    }
    if source.n() != reference.n() {
        return Err(Error::DimensionMismatch {
            what: "procrustes sample count",
            expected: reference.n(),
            got: source.n(),
        });
    }
    let cross = source.values().tr_mul(reference.values());
    let svd = linalg::svd_desc(&cross);
    let q = &svd.u * svd.v.transpose();
    let residual = (source.values() * &q - reference.values()).norm();
    Ok(OrthogonalMap { q, residual })
}
