use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Branch, FeatureMatrix, FeaturePairDataset, Level, Split};
use crate::linalg;
use crate::rng::{self, Stream};

/// Parameters of a planted shared/unique feature pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedSpec {
    pub n: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub shared_dim: usize,
    pub unique_dim_x: usize,
    pub unique_dim_y: usize,
    /// Expected share of per-dimension variance carried by the shared block.
    pub shared_fraction: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl PlantedSpec {
    /// Share left for the unique block: 1 - shared_fraction - noise_std^2.
    pub fn unique_fraction(&self) -> f64 {
        1.0 - self.shared_fraction - self.noise_std * self.noise_std
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n < 2 {
            return Err(Error::TooFewSamples { got: self.n, need: 2 });
        }
        if self.d_x == 0 || self.d_y == 0 {
            return bad("feature dimensions must be positive".into());
        }
        let need_x = self.shared_dim + self.unique_dim_x;
        let need_y = self.shared_dim + self.unique_dim_y;
        if need_x > self.d_x || need_y > self.d_y {
            return bad(format!(
                "shared_dim + unique dims ({need_x}, {need_y}) exceed feature dims ({}, {})",
                self.d_x, self.d_y
            ));
        }
        if !(0.0..=1.0).contains(&self.shared_fraction) || !(self.noise_std >= 0.0) {
            return bad("shared_fraction must lie in [0, 1] and noise_std be >= 0".into());
        }
        let uf = self.unique_fraction();
        if uf < -1e-9 {
            return bad(format!(
                "shared_fraction {} plus noise variance {} exceeds 1",
                self.shared_fraction,
                self.noise_std * self.noise_std
            ));
        }
        if self.shared_fraction > 0.0 && self.shared_dim == 0 {
            return bad("a positive shared_fraction needs shared_dim >= 1".into());
        }
        if uf > 1e-9 && (self.unique_dim_x == 0 || self.unique_dim_y == 0) {
            return bad("a positive unique fraction needs unique dims >= 1".into());
        }
        Ok(())
    }
}

/// What the generator planted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// shared_dim x d_x orthonormal rows.
    pub shared_loadings_x: DMatrix<f64>,
    pub unique_loadings_x: DMatrix<f64>,
    pub shared_loadings_y: DMatrix<f64>,
    pub unique_loadings_y: DMatrix<f64>,
    pub shared_fraction: f64,
    pub unique_fraction: f64,
    pub noise_variance: f64,
    /// Centered shared-block energy over centered total energy, per branch.
    pub empirical_shared_x: f64,
    pub empirical_shared_y: f64,
}

fn scale(frac: f64, d: usize, dim: usize) -> f64 {
    if dim == 0 {
        0.0
    } else {
        (frac.max(0.0) * d as f64 / dim as f64).sqrt()
    }
}

struct Branch1 {
    values: DMatrix<f64>,
    a_s: DMatrix<f64>,
    a_u: DMatrix<f64>,
    empirical_shared: f64,
}

fn compose(spec: &PlantedSpec, shared: &DMatrix<f64>, d: usize, unique_dim: usize, side: u64) -> Branch1 {
    let q = linalg::random_orthogonal(d, &mut rng::stream(spec.seed, Stream::FeatureLoadings, side));
    let a_s = q.rows(0, spec.shared_dim).into_owned();
    let a_u = q.rows(spec.shared_dim, unique_dim).into_owned();
    let u = linalg::gaussian_matrix(spec.n, unique_dim, &mut rng::stream(spec.seed, Stream::FeatureFactors, 1 + side));
    let e = linalg::gaussian_matrix(spec.n, d, &mut rng::stream(spec.seed, Stream::FeatureNoise, side));
    let shared_part = shared * &a_s * scale(spec.shared_fraction, d, spec.shared_dim);
    let unique_part = u * &a_u * scale(spec.unique_fraction(), d, unique_dim);
    let values = &shared_part + unique_part + e * spec.noise_std;
    let total = linalg::center_columns(&values).norm_squared();
    let empirical_shared = if total > 0.0 {
        linalg::center_columns(&shared_part).norm_squared() / total
    } else {
        0.0
    };
    Branch1 {
        values,
        a_s,
        a_u,
        empirical_shared,
    }
}

/// Builds the pair from explicit shared factors (n x shared_dim) and ids.
pub(crate) fn planted_from_factors(
    spec: &PlantedSpec,
    shared: &DMatrix<f64>,
    ids: Vec<String>,
    level: Level,
) -> Result<(FeaturePairDataset, GroundTruth)> {
    spec.validate()?;
    if shared.shape() != (spec.n, spec.shared_dim) {
        return Err(Error::DimensionMismatch {
            what: "shared factor rows",
            expected: spec.n,
            got: shared.nrows(),
        });
    }
    let bx = compose(spec, shared, spec.d_x, spec.unique_dim_x, 0);
    let by = compose(spec, shared, spec.d_y, spec.unique_dim_y, 1);
    let pair = FeaturePairDataset::new(
        FeatureMatrix::new(ids.clone(), bx.values, level, Branch::Vlm)?,
        FeatureMatrix::new(ids, by.values, level, Branch::Vision)?,
        Split::Train,
    )?;
    Ok((
        pair,
        GroundTruth {
            shared_loadings_x: bx.a_s,
            unique_loadings_x: bx.a_u,
            shared_loadings_y: by.a_s,
            unique_loadings_y: by.a_u,
            shared_fraction: spec.shared_fraction,
            unique_fraction: spec.unique_fraction().max(0.0),
            noise_variance: spec.noise_std * spec.noise_std,
            empirical_shared_x: bx.empirical_shared,
            empirical_shared_y: by.empirical_shared,
        },
    ))
}

/// x = [S, U_x] A_x + noise and y = [S, U_y] A_y + noise with a common
/// Gaussian factor block S. Loadings are orthonormal rows, scaled so each
/// block contributes its fraction of the per-dimension variance.
pub fn gen_paired_features(spec: &PlantedSpec) -> Result<(FeaturePairDataset, GroundTruth)> {
    spec.validate()?;
    let shared = linalg::gaussian_matrix(spec.n, spec.shared_dim, &mut rng::stream(spec.seed, Stream::FeatureFactors, 0));
    let ids = (0..spec.n).map(|i| format!("s{i:06}")).collect();
    planted_from_factors(spec, &shared, ids, Level::Backbone)
}
