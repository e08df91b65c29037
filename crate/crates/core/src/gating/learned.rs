use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, Adam, AdamConfig, Mlp, Parameters};
use crate::rng::{self, Stream};

/// How the two branch vectors are combined into the gate input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateInput {
    /// [x; y]
    Concat,
    /// x - y
    Diff,
    /// [x; y; x - y]
    Combined,
}

/// Builds gate inputs row by row. `Diff` and `Combined` need equal widths.
pub fn gate_inputs(x: &DMatrix<f64>, y: &DMatrix<f64>, mode: GateInput) -> Result<DMatrix<f64>> {
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch {
            what: "gate input rows",
            expected: x.nrows(),
            got: y.nrows(),
        });
    }
    if mode != GateInput::Concat && x.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch {
            what: "gate input widths",
            expected: x.ncols(),
            got: y.ncols(),
        });
    }
    let (n, dx, dy) = (x.nrows(), x.ncols(), y.ncols());
    Ok(match mode {
        GateInput::Concat => DMatrix::from_fn(n, dx + dy, |i, j| if j < dx { x[(i, j)] } else { y[(i, j - dx)] }),
        GateInput::Diff => x - y,
        GateInput::Combined => DMatrix::from_fn(n, 3 * dx, |i, j| match j / dx {
            0 => x[(i, j)],
            1 => y[(i, j - dx)],
            _ => x[(i, j - 2 * dx)] - y[(i, j - 2 * dx)],
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateTrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
}

impl Default for GateTrainConfig {
    fn default() -> Self {
        GateTrainConfig {
            seed: 0,
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            hidden: 64,
        }
    }
}

/// Two-layer classifier with logistic output over standardized inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateModel {
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
    pub net: Mlp,
}

impl GateModel {
    fn normalize(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.std[j])
    }
}

/// Mean binary cross-entropy of logits against labels, with dL/dlogit.
fn bce(logits: &DMatrix<f64>, labels: &[f64]) -> (f64, DMatrix<f64>) {
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = DMatrix::zeros(labels.len(), 1);
    for (i, &y) in labels.iter().enumerate() {
        let z = logits[(i, 0)];
        // log(1 + e^z) - y z, computed stably.
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
        grad[(i, 0)] = (sigmoid(z) - y) / n;
    }
    (loss / n, grad)
}

/// Trains on rows with a label; `None` rows (ties) are dropped.
pub fn learned_gate_train(features: &DMatrix<f64>, labels: &[Option<bool>], cfg: &GateTrainConfig) -> Result<GateModel> {
    if features.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "gate labels",
            expected: features.nrows(),
            got: labels.len(),
        });
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.hidden == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument("gate training needs positive epochs, batch size, hidden width and lr".into()));
    }
    let keep: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
    let y: Vec<f64> = keep.iter().map(|&i| if labels[i] == Some(true) { 1.0 } else { 0.0 }).collect();
    let positives = y.iter().filter(|&&v| v == 1.0).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::SingleClass);
    }
    let x = features.select_rows(keep.iter());
    let n = x.nrows();
    let mean = DVector::from_fn(x.ncols(), |j, _| x.column(j).mean());
    let std = DVector::from_fn(x.ncols(), |j, _| {
        let m = mean[j];
        let v = x.column(j).iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
        v.sqrt().max(1e-8)
    });
    let mut model = GateModel {
        mean,
        std,
        net: Mlp::init(&[x.ncols(), cfg.hidden, 1], &mut rng::stream(cfg.seed, Stream::GateInit, 0)),
    };
    let xs = model.normalize(&x);
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        model.net.num_params(),
    );
    for epoch in 0..cfg.epochs {
        let order = rng::permutation(n, &mut rng::stream(cfg.seed, Stream::GateBatches, epoch as u64));
        for idx in order.chunks(cfg.batch_size) {
            let bx = xs.select_rows(idx.iter());
            let by: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            let (logits, cache) = model.net.forward_cached(&bx);
            let (loss, dl) = bce(&logits, &by);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    term: "gate bce".into(),
                });
            }
            let mut grad = model.net.zeros_like();
            model.net.backward(&cache, &dl, &mut grad);
            adam.step(&mut model.net, &grad);
        }
    }
    Ok(model)
}

/// Probability that the VLM branch is better, per row.
pub fn learned_gate_predict(model: &GateModel, features: &DMatrix<f64>) -> Result<Vec<f64>> {
    if features.ncols() != model.mean.len() {
        return Err(Error::DimensionMismatch {
            what: "gate feature width",
            expected: model.mean.len(),
            got: features.ncols(),
        });
    }
    let logits = model.net.forward(&model.normalize(features));
    Ok(logits.iter().map(|&z| sigmoid(z)).collect())
}
