use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::model::{SaeDims, SaeModel};
use crate::error::{Error, Result};
use crate::features::Standardizer;
use crate::nn::{Dense, Mlp};

pub const CHECKPOINT_VERSION: &str = "SAE1";

/// Matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RowMajor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RowMajor {
    fn from(m: &DMatrix<f64>) -> Self {
        RowMajor {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }

    fn to(&self, what: &'static str) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.rows * self.cols,
                got: self.data.len(),
            });
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    w: RowMajor,
    b: Vec<f64>,
}

fn enc_out(m: &Mlp) -> Vec<LayerRecord> {
    m.layers
        .iter()
        .map(|l| LayerRecord {
            w: RowMajor::from(&l.w),
            b: l.b.as_slice().to_vec(),
        })
        .collect()
}

fn enc_in(v: &[LayerRecord]) -> Result<Mlp> {
    let layers = v
        .iter()
        .map(|l| {
            let w = l.w.to("encoder weight")?;
            if l.b.len() != w.ncols() {
                return Err(Error::DimensionMismatch {
                    what: "encoder bias",
                    expected: w.ncols(),
                    got: l.b.len(),
                });
            }
            Ok(Dense {
                w,
                b: DVector::from_vec(l.b.clone()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if layers.is_empty() {
        return Err(Error::InvalidArgument("encoder without layers".into()));
    }
    Ok(Mlp { layers })
}

/// A trained model with the standardization statistics it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaeCheckpoint {
    version: String,
    dims: SaeDims,
    enc_shared_x: Vec<LayerRecord>,
    enc_unique_x: Vec<LayerRecord>,
    enc_shared_y: Vec<LayerRecord>,
    enc_unique_y: Vec<LayerRecord>,
    dec_shared_x: RowMajor,
    dec_unique_x: RowMajor,
    dec_shared_y: RowMajor,
    dec_unique_y: RowMajor,
    bias_x: Vec<f64>,
    bias_y: Vec<f64>,
    pub standardizer_x: Standardizer,
    pub standardizer_y: Standardizer,
}

impl SaeCheckpoint {
    pub fn new(model: &SaeModel, standardizer_x: Standardizer, standardizer_y: Standardizer) -> Self {
        SaeCheckpoint {
            version: CHECKPOINT_VERSION.to_string(),
            dims: model.dims,
            enc_shared_x: enc_out(&model.enc_shared_x),
            enc_unique_x: enc_out(&model.enc_unique_x),
            enc_shared_y: enc_out(&model.enc_shared_y),
            enc_unique_y: enc_out(&model.enc_unique_y),
            dec_shared_x: RowMajor::from(&model.dec_shared_x),
            dec_unique_x: RowMajor::from(&model.dec_unique_x),
            dec_shared_y: RowMajor::from(&model.dec_shared_y),
            dec_unique_y: RowMajor::from(&model.dec_unique_y),
            bias_x: model.bias_x.as_slice().to_vec(),
            bias_y: model.bias_y.as_slice().to_vec(),
            standardizer_x,
            standardizer_y,
        }
    }

    pub fn model(&self) -> Result<SaeModel> {
        let m = SaeModel {
            dims: self.dims,
            enc_shared_x: enc_in(&self.enc_shared_x)?,
            enc_unique_x: enc_in(&self.enc_unique_x)?,
            enc_shared_y: enc_in(&self.enc_shared_y)?,
            enc_unique_y: enc_in(&self.enc_unique_y)?,
            dec_shared_x: self.dec_shared_x.to("dec_shared_x")?,
            dec_unique_x: self.dec_unique_x.to("dec_unique_x")?,
            dec_shared_y: self.dec_shared_y.to("dec_shared_y")?,
            dec_unique_y: self.dec_unique_y.to("dec_unique_y")?,
            bias_x: DVector::from_vec(self.bias_x.clone()),
            bias_y: DVector::from_vec(self.bias_y.clone()),
        };
        let d = self.dims;
        let shapes = [
            ("dec_shared_x", m.dec_shared_x.shape(), (d.d_x, d.d_s)),
            ("dec_unique_x", m.dec_unique_x.shape(), (d.d_x, d.d_u)),
            ("dec_shared_y", m.dec_shared_y.shape(), (d.d_y, d.d_s)),
            ("dec_unique_y", m.dec_unique_y.shape(), (d.d_y, d.d_u)),
            ("bias_x", (m.bias_x.len(), 1), (d.d_x, 1)),
            ("bias_y", (m.bias_y.len(), 1), (d.d_y, 1)),
            ("enc_shared_x", (m.enc_shared_x.input_dim(), m.enc_shared_x.output_dim()), (d.d_x, d.d_s)),
            ("enc_unique_x", (m.enc_unique_x.input_dim(), m.enc_unique_x.output_dim()), (d.d_x, d.d_u)),
            ("enc_shared_y", (m.enc_shared_y.input_dim(), m.enc_shared_y.output_dim()), (d.d_y, d.d_s)),
            ("enc_unique_y", (m.enc_unique_y.input_dim(), m.enc_unique_y.output_dim()), (d.d_y, d.d_u)),
        ];
        for (what, got, want) in shapes {
            if got != want {
                return Err(Error::InvalidArgument(format!("checkpoint {what} has shape {got:?}, expected {want:?}")));
            }
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        let found = v.get("version").and_then(|s| s.as_str()).unwrap_or("").to_string();
        if found != CHECKPOINT_VERSION {
            return Err(Error::Version {
                expected: CHECKPOINT_VERSION.to_string(),
                found,
            });
        }
        Ok(serde_json::from_value(v)?)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<SaeCheckpoint> {
    SaeCheckpoint::from_json(&std::fs::read_to_string(path)?)
}
