use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::loss::{sae_loss_and_grad, LossBreakdown, SaeBatch};
use super::model::{SaeDims, SaeModel};
use super::{SaeLossWeights, StandardizedPair};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Parameters};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub d_s: usize,
    pub d_u: usize,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            epochs: 200,
            batch_size: 256,
            lr: 1e-3,
            d_s: 64,
            d_u: 16,
            hidden: 256,
        }
    }
}

impl TrainConfig {
    pub fn dims(&self, d_x: usize, d_y: usize) -> SaeDims {
        SaeDims {
            d_x,
            d_y,
            d_s: self.d_s,
            d_u: self.d_u,
            hidden: self.hidden,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::BatchTooSmall(self.batch_size));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Per-epoch means of every loss term, weighted by batch size.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<LossBreakdown>,
}

impl TrainingHistory {
    pub fn first(&self) -> Option<&LossBreakdown> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&LossBreakdown> {
        self.epochs.last()
    }

    pub fn to_csv(&self) -> String {
        let names: Vec<&str> = std::iter::once("epoch")
            .chain(LossBreakdown::default().terms().iter().map(|(n, _)| *n))
            .collect();
        let mut csv = crate::table::Csv::new(&names);
        for (e, l) in self.epochs.iter().enumerate() {
            csv.row(std::iter::once((e + 1).to_string()).chain(l.terms().iter().map(|(_, v)| crate::table::fmt_f64(*v))));
        }
        csv.into_string()
    }
}

/// Splits a shuffled index list into batches of `size`; a trailing batch of
/// one row is folded into the previous batch.
pub(crate) fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().map_or(false, |b| b.len() < 2) {
        let n = order.len();
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("non-empty") = &order[start..n];
    }
    out
}

/// Trains on a standardized training pair. Seeds fix initialization and the
/// per-epoch shuffles, so equal seeds give equal histories.
pub fn sae_train(ds: &StandardizedPair, weights: &SaeLossWeights, cfg: &TrainConfig) -> Result<(SaeModel, TrainingHistory)> {
    weights.validate()?;
    cfg.validate()?;
    let n = ds.data.n();
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    let x = ds.data.x.values();
    let y = ds.data.y.values();
    let mut model = SaeModel::init(cfg.dims(x.ncols(), y.ncols()), &mut rng::stream(cfg.seed, Stream::SaeInit, 0))?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        model.num_params(),
    );
    let raw_var_x: Vec<f64> = ds.std_x.std.iter().map(|s| s * s).collect();
    let raw_var_y: Vec<f64> = ds.std_y.std.iter().map(|s| s * s).collect();
    let mut history = TrainingHistory::default();
    for epoch in 0..cfg.epochs {
        let order = rng::permutation(n, &mut rng::stream(cfg.seed, Stream::SaeShuffle, epoch as u64));
        let mut acc = LossBreakdown::default();
        for idx in batches(&order, cfg.batch_size.min(n)) {
            let bx: DMatrix<f64> = x.select_rows(idx.iter());
            let by: DMatrix<f64> = y.select_rows(idx.iter());
            let batch = SaeBatch {
                x: &bx,
                y: &by,
                raw_var_x: Some(&raw_var_x),
                raw_var_y: Some(&raw_var_y),
            };
            let (loss, grad) = sae_loss_and_grad(&model, &batch, weights)?;
            if let Some((term, _)) = loss.terms().iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    term: term.to_string(),
                });
            }
            adam.step(&mut model, &grad);
            if !model.all_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    term: "parameters".into(),
                });
            }
            acc.scaled_add(&loss, idx.len() as f64 / n as f64);
        }
        log::debug!("sae epoch {} total {:.6}", epoch + 1, acc.total);
        history.epochs.push(acc);
    }
    Ok((model, history))
}
