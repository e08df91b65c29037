use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::model::{sae_forward, SaeModel};
use crate::error::{Error, Result};
use crate::features::FeaturePairDataset;
use crate::linalg;
use crate::similarity::linear_cka_values;

/// Reconstruction and alignment metrics in standardized space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaeMetrics {
    pub r2_full_x: f64,
    pub r2_full_y: f64,
    pub r2_shared_x: f64,
    pub r2_shared_y: f64,
    pub r2_cross_x: f64,
    pub r2_cross_y: f64,
    /// r2_shared_x - r2_cross_x.
    pub gap_x: f64,
    pub gap_y: f64,
    pub cka_shared: f64,
    pub cka_orig: f64,
}

/// 1 - MSE / Var with the variance taken around the training mean, which is
/// zero in standardized coordinates.
pub(crate) fn r2(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<f64> {
    let var = target.norm_squared();
    if var <= 0.0 {
        return Err(Error::DegenerateInput("R^2 target has zero variance".into()));
    }
    Ok(1.0 - (pred - target).norm_squared() / var)
}

pub fn sae_metrics(model: &SaeModel, data: &FeaturePairDataset) -> Result<SaeMetrics> {
    let x = data.x.values();
    let y = data.y.values();
    let a = sae_forward(model, x, y)?;
    let r2_shared_x = r2(&a.x_shared, x)?;
    let r2_shared_y = r2(&a.y_shared, y)?;
    let r2_cross_x = r2(&a.x_cross, x)?;
    let r2_cross_y = r2(&a.y_cross, y)?;
    Ok(SaeMetrics {
        r2_full_x: r2(&a.x_full, x)?,
        r2_full_y: r2(&a.y_full, y)?,
        r2_shared_x,
        r2_shared_y,
        r2_cross_x,
        r2_cross_y,
        gap_x: r2_shared_x - r2_cross_x,
        gap_y: r2_shared_y - r2_cross_y,
        cka_shared: linear_cka_values(&a.zs_x, &a.zs_y)?,
        cka_orig: linear_cka_values(x, y)?,
    })
}

/// Output-space decomposition for one branch. Variances average the
/// per-dimension (population) variances over dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchVariance {
    pub var_shared: f64,
    pub var_unique: f64,
    /// Cov(x_s, x_u); enters the identity twice.
    pub covariance_term: f64,
    /// Var(eps) + 2 Cov(x_s + x_u, eps).
    pub var_residual: f64,
    pub var_epsilon: f64,
    pub residual_cross: f64,
    pub var_total: f64,
}

impl BranchVariance {
    /// Relative defect of var_shared + var_unique + 2 cov + var_residual = var_total.
    pub fn identity_defect(&self) -> f64 {
        let sum = self.var_shared + self.var_unique + 2.0 * self.covariance_term + self.var_residual;
        (sum - self.var_total).abs() / self.var_total.abs().max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub x: BranchVariance,
    pub y: BranchVariance,
}

fn cov_avg(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let ac = linalg::center_columns(a);
    let bc = linalg::center_columns(b);
    ac.dot(&bc) / (a.nrows() * a.ncols()) as f64
}

fn branch(target: &DMatrix<f64>, shared: DMatrix<f64>, unique: DMatrix<f64>, bias: &nalgebra::DVector<f64>) -> BranchVariance {
    let mut eps = target - &shared - &unique;
    for mut row in eps.row_iter_mut() {
        row -= bias.transpose();
    }
    let model_part = &shared + &unique;
    let var_epsilon = cov_avg(&eps, &eps);
    let residual_cross = 2.0 * cov_avg(&model_part, &eps);
    BranchVariance {
        var_shared: cov_avg(&shared, &shared),
        var_unique: cov_avg(&unique, &unique),
        covariance_term: cov_avg(&shared, &unique),
        var_residual: var_epsilon + residual_cross,
        var_epsilon,
        residual_cross,
        var_total: cov_avg(target, target),
    }
}

/// Splits each branch's variance into shared, unique, shared-unique
/// covariance and residual parts using the additive decoder contributions.
pub fn variance_attribution(model: &SaeModel, data: &FeaturePairDataset) -> Result<VarianceReport> {
    let x = data.x.values();
    let y = data.y.values();
    let a = sae_forward(model, x, y)?;
    Ok(VarianceReport {
        x: branch(
            x,
            &a.zs_x * model.dec_shared_x.transpose(),
            &a.zu_x * model.dec_unique_x.transpose(),
            &model.bias_x,
        ),
        y: branch(
            y,
            &a.zs_y * model.dec_shared_y.transpose(),
            &a.zu_y * model.dec_unique_y.transpose(),
            &model.bias_y,
        ),
    })
}
