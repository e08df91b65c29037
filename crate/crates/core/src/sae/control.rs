use serde::{Deserialize, Serialize};

use super::metrics::sae_metrics;
use super::train::{sae_train, TrainConfig};
use super::{SaeLossWeights, StandardizedPair};
use crate::error::{Error, Result};
use crate::features::FeaturePairDataset;
use crate::rng::{self, Stream};

/// Shared-space and original-space CKA for the true pairing and for a
/// retrained model on permuted pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub true_cka_shared: f64,
    pub true_cka_orig: f64,
    pub shuffled_cka_shared: f64,
    pub shuffled_cka_orig: f64,
    /// Seed of the permutation stream; `None` when the permutation was given.
    pub permutation_seed: Option<u64>,
    pub permutation: Vec<usize>,
}

/// Permutes the y rows (keeping both marginals), retrains with the same
/// configuration and compares CKA values. Both runs are evaluated on the
/// pairing they were trained on.
pub fn shuffled_pair_control(
    ds: &StandardizedPair,
    weights: &SaeLossWeights,
    cfg: &TrainConfig,
    permutation: Option<Vec<usize>>,
) -> Result<ControlReport> {
    let n = ds.data.n();
    let (perm, permutation_seed) = match permutation {
        Some(p) => {
            let mut sorted = p.clone();
            sorted.sort_unstable();
            if sorted != (0..n).collect::<Vec<_>>() {
                return Err(Error::InvalidArgument("control permutation is not a permutation of the rows".into()));
            }
            (p, None)
        }
        None => (rng::permutation(n, &mut rng::stream(cfg.seed, Stream::PairShuffle, 0)), Some(cfg.seed)),
    };
    let (true_model, _) = sae_train(ds, weights, cfg)?;
    let true_m = sae_metrics(&true_model, &ds.data)?;

    let y = ds.data.y.with_values(ds.data.y.values().select_rows(perm.iter()))?;
    let shuffled = StandardizedPair {
        data: FeaturePairDataset::new(ds.data.x.clone(), y, ds.data.split)?,
        std_x: ds.std_x.clone(),
        std_y: ds.std_y.clone(),
    };
    let (shuf_model, _) = sae_train(&shuffled, weights, cfg)?;
    let shuf_m = sae_metrics(&shuf_model, &shuffled.data)?;
    Ok(ControlReport {
        true_cka_shared: true_m.cka_shared,
        true_cka_orig: true_m.cka_orig,
        shuffled_cka_shared: shuf_m.cka_shared,
        shuffled_cka_orig: shuf_m.cka_orig,
        permutation_seed,
        permutation: perm,
    })
}
