//! Shared/unique sparse autoencoder over paired features.
//!
//! Each branch gets a shared encoder and a unique encoder (two-layer ReLU
//! MLPs) and an additive linear decoder. Training uses the full loss ledger
//! with an analytic backward pass.

mod checkpoint;
mod control;
mod loss;
mod metrics;
mod model;
mod sweep;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{apply_standardizer, fit_standardizer, FeaturePairDataset, Split, Standardizer};

pub use checkpoint::{load_checkpoint, SaeCheckpoint, CHECKPOINT_VERSION};
pub use control::{shuffled_pair_control, ControlReport};
pub use loss::{kink_distance, sae_loss, sae_loss_and_grad, LossBreakdown, SaeBatch};
pub use metrics::{sae_metrics, variance_attribution, BranchVariance, SaeMetrics, VarianceReport};
pub use model::{sae_forward, SaeActivations, SaeDims, SaeModel};
pub use sweep::{sae_sweep, SweepCell, SweepRow, SweepTable, DEFAULT_CROSS_WEIGHTS};
pub use train::{sae_train, TrainConfig, TrainingHistory};

/// Weights of the loss ledger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaeLossWeights {
    pub rec: f64,
    pub sh: f64,
    pub cross: f64,
    pub vic: f64,
    pub ort: f64,
    pub sp: f64,
    pub vic_alpha: f64,
    pub vic_beta: f64,
    pub vic_gamma: f64,
    pub vic_margin: f64,
    /// Reconstruction errors measured in raw feature units.
    pub use_raw_mse: bool,
}

impl Default for SaeLossWeights {
    fn default() -> Self {
        SaeLossWeights {
            rec: 1.0,
            sh: 1.0,
            cross: 0.0,
            vic: 1.0,
            ort: 0.1,
            sp: 1e-3,
            vic_alpha: 25.0,
            vic_beta: 25.0,
            vic_gamma: 1.0,
            vic_margin: 1.0,
            use_raw_mse: false,
        }
    }
}

impl SaeLossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("rec", self.rec),
            ("sh", self.sh),
            ("cross", self.cross),
            ("vic", self.vic),
            ("ort", self.ort),
            ("sp", self.sp),
            ("vic_alpha", self.vic_alpha),
            ("vic_beta", self.vic_beta),
            ("vic_gamma", self.vic_gamma),
            ("vic_margin", self.vic_margin),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Only the named term switched on (weight 1), everything else 0.
    pub fn only(term: &str) -> Self {
        let mut w = SaeLossWeights {
            rec: 0.0,
            sh: 0.0,
            cross: 0.0,
            vic: 0.0,
            ort: 0.0,
            sp: 0.0,
            ..Default::default()
        };
        match term {
            "rec" => w.rec = 1.0,
            "sh" => w.sh = 1.0,
            "cross" => w.cross = 1.0,
            "inv" => {
                w.vic = 1.0;
                w.vic_beta = 0.0;
                w.vic_gamma = 0.0;
                w.vic_alpha = 1.0;
            }
            "var" => {
                w.vic = 1.0;
                w.vic_alpha = 0.0;
                w.vic_gamma = 0.0;
                w.vic_beta = 1.0;
            }
            "cov" => {
                w.vic = 1.0;
                w.vic_alpha = 0.0;
                w.vic_beta = 0.0;
                w.vic_gamma = 1.0;
            }
            "ort" => w.ort = 1.0,
            "sp" => w.sp = 1.0,
            other => panic!("unknown loss term {other}"),
        }
        w
    }
}

/// Names of the individually weighted loss terms.
pub const LOSS_TERMS: [&str; 8] = ["rec", "sh", "cross", "inv", "var", "cov", "ort", "sp"];

/// A standardized training (or evaluation) pair together with the
/// training-split statistics used to produce it.
#[derive(Debug, Clone)]
pub struct StandardizedPair {
    pub data: FeaturePairDataset,
    pub std_x: Standardizer,
    pub std_y: Standardizer,
}

impl StandardizedPair {
    /// Fits statistics on `raw_train` and standardizes it.
    pub fn fit(raw_train: &FeaturePairDataset) -> Result<Self> {
        if raw_train.split != Split::Train {
            return Err(Error::InvalidArgument(
                "standardization statistics must come from the train split".into(),
            ));
        }
        let std_x = fit_standardizer(&raw_train.x, Split::Train)?;
        let std_y = fit_standardizer(&raw_train.y, Split::Train)?;
        Self::with_stats(raw_train, std_x, std_y)
    }

    /// Applies this pair's statistics to another raw split.
    pub fn apply(&self, raw: &FeaturePairDataset) -> Result<Self> {
        Self::with_stats(raw, self.std_x.clone(), self.std_y.clone())
    }

    pub fn with_stats(raw: &FeaturePairDataset, std_x: Standardizer, std_y: Standardizer) -> Result<Self> {
        let data = FeaturePairDataset::new(
            apply_standardizer(&raw.x, &std_x)?,
            apply_standardizer(&raw.y, &std_y)?,
            raw.split,
        )?;
        Ok(StandardizedPair { data, std_x, std_y })
    }
}
