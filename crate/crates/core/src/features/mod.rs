//! Paired feature matrices and the preprocessing that every similarity
//! measure builds on.

mod io;
pub(crate) mod pca;
mod procrustes;
mod projection;
mod standardize;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub use io::{load_features, parse_features, write_features};
pub use pca::{pca_truncate, whiten, PcaBasis, DEFAULT_ETA, DEFAULT_RIDGE};
pub use procrustes::{procrustes, OrthogonalMap};
pub use projection::{project_2d, ProjectionPoint, ProjectionTable};
pub use standardize::{apply_standardizer, fit_standardizer, Standardizer, STD_FLOOR};

/// Which stage of the network a feature was taken from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    #[default]
    Backbone,
    Decision,
}

/// Which backbone produced a feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Vlm,
    Vision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

macro_rules! text_enum {
    ($ty:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$var => $s),+ })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($ty::$var),)+
                    other => Err(Error::InvalidArgument(format!(
                        concat!("unknown ", stringify!($ty), " {:?}"), other
                    ))),
                }
            }
        }
    };
}

text_enum!(Level { Backbone => "backbone", Decision => "decision" });
text_enum!(Branch { Vlm => "vlm", Vision => "vision" });
text_enum!(Split { Train => "train", Val => "val", Test => "test" });

/// An n x d matrix of per-sample feature vectors keyed by sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    sample_ids: Vec<String>,
    values: DMatrix<f64>,
    level: Level,
    branch: Branch,
}

impl FeatureMatrix {
    pub fn new(
        sample_ids: Vec<String>,
        values: DMatrix<f64>,
        level: Level,
        branch: Branch,
    ) -> Result<Self> {
        if values.nrows() != sample_ids.len() {
            return Err(Error::DimensionMismatch {
                what: "rows vs sample ids",
                expected: sample_ids.len(),
                got: values.nrows(),
            });
        }
        if values.nrows() < 2 {
            return Err(Error::TooFewSamples {
                got: values.nrows(),
                need: 2,
            });
        }
        if values.ncols() == 0 {
            return Err(Error::InvalidArgument("feature dimension must be at least 1".into()));
        }
        let mut seen = HashSet::with_capacity(sample_ids.len());
        for id in &sample_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        for i in 0..values.nrows() {
            for j in 0..values.ncols() {
                if !values[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(FeatureMatrix {
            sample_ids,
            values,
            level,
            branch,
        })
    }

    /// Builds a matrix with generated ids `s0, s1, ...`.
    pub fn from_values(values: DMatrix<f64>, level: Level, branch: Branch) -> Result<Self> {
        let ids = (0..values.nrows()).map(|i| format!("s{i}")).collect();
        Self::new(ids, values, level, branch)
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    /// Same ids and tags, new values. The caller keeps the row count.
    pub fn with_values(&self, values: DMatrix<f64>) -> Result<Self> {
        Self::new(self.sample_ids.clone(), values, self.level, self.branch)
    }

    /// Rows at `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let ids = idx.iter().map(|&i| self.sample_ids[i].clone()).collect();
        let values = self.values.select_rows(idx.iter());
        Self::new(ids, values, self.level, self.branch)
    }
}

/// Two feature matrices whose rows describe the same samples in the same
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePairDataset {
    pub x: FeatureMatrix,
    pub y: FeatureMatrix,
    pub split: Split,
}

impl FeaturePairDataset {
    pub fn new(x: FeatureMatrix, y: FeatureMatrix, split: Split) -> Result<Self> {
        if x.n() != y.n() {
            return Err(Error::DimensionMismatch {
                what: "paired rows",
                expected: x.n(),
                got: y.n(),
            });
        }
        if x.sample_ids != y.sample_ids {
            return Err(Error::InvalidArgument(
                "paired matrices must list the same sample ids in the same order".into(),
            ));
        }
        Ok(FeaturePairDataset { x, y, split })
    }

    pub fn n(&self) -> usize {
        self.x.n()
    }

    pub fn select_rows(&self, idx: &[usize], split: Split) -> Result<Self> {
        Self::new(self.x.select_rows(idx)?, self.y.select_rows(idx)?, split)
    }

    /// Deterministic split: the first `n_train` rows become the training
    /// split, the rest the test split.
    pub fn split_at(&self, n_train: usize) -> Result<(Self, Self)> {
        let n = self.n();
        if n_train < 2 || n - n_train.min(n) < 2 {
            return Err(Error::InvalidArgument(format!(
                "cannot split {n} rows at {n_train}"
            )));
        }
        let train: Vec<usize> = (0..n_train).collect();
        let test: Vec<usize> = (n_train..n).collect();
        Ok((
            self.select_rows(&train, Split::Train)?,
            self.select_rows(&test, Split::Test)?,
        ))
    }
}

/// Result of [`pair`]: the aligned dataset plus the ids that only one side
/// carried.
#[derive(Debug, Clone)]
pub struct Pairing {
    pub dataset: FeaturePairDataset,
    pub dropped_x: Vec<String>,
    pub dropped_y: Vec<String>,
}

/// Aligns two matrices on the sorted intersection of their sample ids.
pub fn pair(x: &FeatureMatrix, y: &FeatureMatrix, split: Split) -> Result<Pairing> {
    if x.d() == 0 || y.d() == 0 {
        return Err(Error::InvalidArgument("empty feature dimension".into()));
    }
    let xi: HashMap<&str, usize> = x.sample_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let yi: HashMap<&str, usize> = y.sample_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    // BTreeSet over &str orders byte-wise.
    let common: BTreeSet<&str> = xi.keys().filter(|k| yi.contains_key(*k)).copied().collect();
    if common.len() < 2 {
        return Err(Error::EmptyIntersection(common.len()));
    }
    let xrows: Vec<usize> = common.iter().map(|k| xi[k]).collect();
    let yrows: Vec<usize> = common.iter().map(|k| yi[k]).collect();
    let dropped = |m: &FeatureMatrix| -> Vec<String> {
        let mut v: Vec<String> = m
            .sample_ids
            .iter()
            .filter(|s| !common.contains(s.as_str()))
            .cloned()
            .collect();
        v.sort();
        v
    };
    Ok(Pairing {
        dataset: FeaturePairDataset::new(x.select_rows(&xrows)?, y.select_rows(&yrows)?, split)?,
        dropped_x: dropped(x),
        dropped_y: dropped(y),
    })
}

/// Subtracts each column's mean (H X with H = I - 11^T/n).
pub fn center(m: &FeatureMatrix) -> FeatureMatrix {
    FeatureMatrix {
        sample_ids: m.sample_ids.clone(),
        values: linalg::center_columns(&m.values),
        level: m.level,
        branch: m.branch,
    }
}
