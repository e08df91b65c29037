use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpCache, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaeDims {
    pub d_x: usize,
    pub d_y: usize,
    pub d_s: usize,
    pub d_u: usize,
    pub hidden: usize,
}

impl SaeDims {
    pub fn new(d_x: usize, d_y: usize) -> Self {
        SaeDims {
            d_x,
            d_y,
            d_s: 64,
            d_u: 16,
            hidden: 256,
        }
    }

    fn validate(&self) -> Result<()> {
        if [self.d_x, self.d_y, self.d_s, self.d_u, self.hidden].contains(&0) {
            return Err(Error::InvalidArgument(format!("SAE dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Encoders `f_s`, `f_u` per branch and additive decoders
/// `x_hat = z_s W_s^T + z_u W_u^T + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    pub dims: SaeDims,
    pub enc_shared_x: Mlp,
    pub enc_unique_x: Mlp,
    pub enc_shared_y: Mlp,
    pub enc_unique_y: Mlp,
    /// d_x x d_s.
    pub dec_shared_x: DMatrix<f64>,
    /// d_x x d_u.
    pub dec_unique_x: DMatrix<f64>,
    pub dec_shared_y: DMatrix<f64>,
    pub dec_unique_y: DMatrix<f64>,
    pub bias_x: DVector<f64>,
    pub bias_y: DVector<f64>,
}

impl SaeModel {
    pub fn init<R: Rng + ?Sized>(dims: SaeDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let enc = |d: usize, latent: usize, rng: &mut R| Mlp::init(&[d, dims.hidden, latent], rng);
        let enc_shared_x = enc(dims.d_x, dims.d_s, rng);
        let enc_unique_x = enc(dims.d_x, dims.d_u, rng);
        let enc_shared_y = enc(dims.d_y, dims.d_s, rng);
        let enc_unique_y = enc(dims.d_y, dims.d_u, rng);
        let dec = |rows: usize, cols: usize, rng: &mut R| crate::nn::Dense::init(cols, rows, 1.0, rng).w.transpose();
        Ok(SaeModel {
            dec_shared_x: dec(dims.d_x, dims.d_s, rng),
            dec_unique_x: dec(dims.d_x, dims.d_u, rng),
            dec_shared_y: dec(dims.d_y, dims.d_s, rng),
            dec_unique_y: dec(dims.d_y, dims.d_u, rng),
            bias_x: DVector::zeros(dims.d_x),
            bias_y: DVector::zeros(dims.d_y),
            enc_shared_x,
            enc_unique_x,
            enc_shared_y,
            enc_unique_y,
            dims,
        })
    }

    /// Same shapes, every parameter zero. Used as a gradient container.
    pub fn zeros_like(&self) -> Self {
        SaeModel {
            dims: self.dims,
            enc_shared_x: self.enc_shared_x.zeros_like(),
            enc_unique_x: self.enc_unique_x.zeros_like(),
            enc_shared_y: self.enc_shared_y.zeros_like(),
            enc_unique_y: self.enc_unique_y.zeros_like(),
            dec_shared_x: DMatrix::zeros(self.dims.d_x, self.dims.d_s),
            dec_unique_x: DMatrix::zeros(self.dims.d_x, self.dims.d_u),
            dec_shared_y: DMatrix::zeros(self.dims.d_y, self.dims.d_s),
            dec_unique_y: DMatrix::zeros(self.dims.d_y, self.dims.d_u),
            bias_x: DVector::zeros(self.dims.d_x),
            bias_y: DVector::zeros(self.dims.d_y),
        }
    }
}

impl Parameters for SaeModel {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.enc_shared_x.visit(f);
        self.enc_unique_x.visit(f);
        self.enc_shared_y.visit(f);
        self.enc_unique_y.visit(f);
        for m in [&self.dec_shared_x, &self.dec_unique_x, &self.dec_shared_y, &self.dec_unique_y] {
            f(m.as_slice());
        }
        f(self.bias_x.as_slice());
        f(self.bias_y.as_slice());
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.enc_shared_x.visit_mut(f);
        self.enc_unique_x.visit_mut(f);
        self.enc_shared_y.visit_mut(f);
        self.enc_unique_y.visit_mut(f);
        for m in [
            &mut self.dec_shared_x,
            &mut self.dec_unique_x,
            &mut self.dec_shared_y,
            &mut self.dec_unique_y,
        ] {
            f(m.as_mut_slice());
        }
        f(self.bias_x.as_mut_slice());
        f(self.bias_y.as_mut_slice());
    }
}

/// Latents and every reconstruction for one batch.
#[derive(Debug, Clone)]
pub struct SaeActivations {
    pub zs_x: DMatrix<f64>,
    pub zu_x: DMatrix<f64>,
    pub zs_y: DMatrix<f64>,
    pub zu_y: DMatrix<f64>,
    pub x_full: DMatrix<f64>,
    pub y_full: DMatrix<f64>,
    pub x_shared: DMatrix<f64>,
    pub y_shared: DMatrix<f64>,
    /// x rebuilt from y's shared code through x's shared decoder.
    pub x_cross: DMatrix<f64>,
    pub y_cross: DMatrix<f64>,
    pub x_mix: DMatrix<f64>,
    pub y_mix: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderCaches {
    pub sx: MlpCache,
    pub ux: MlpCache,
    pub sy: MlpCache,
    pub uy: MlpCache,
}

fn add_bias(mut m: DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    for mut row in m.row_iter_mut() {
        row += b.transpose();
    }
    m
}

pub(crate) fn check_batch(model: &SaeModel, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != model.dims.d_x {
        return Err(Error::DimensionMismatch {
            what: "SAE x width",
            expected: model.dims.d_x,
            got: x.ncols(),
        });
    }
    if y.ncols() != model.dims.d_y {
        return Err(Error::DimensionMismatch {
            what: "SAE y width",
            expected: model.dims.d_y,
            got: y.ncols(),
        });
    }
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch {
            what: "SAE paired rows",
            expected: x.nrows(),
            got: y.nrows(),
        });
    }
    Ok(())
}

fn assemble(model: &SaeModel, zs_x: DMatrix<f64>, zu_x: DMatrix<f64>, zs_y: DMatrix<f64>, zu_y: DMatrix<f64>) -> SaeActivations {
    let ps_x = &zs_x * model.dec_shared_x.transpose();
    let pu_x = &zu_x * model.dec_unique_x.transpose();
    let ps_y = &zs_y * model.dec_shared_y.transpose();
    let pu_y = &zu_y * model.dec_unique_y.transpose();
    let cs_x = &zs_y * model.dec_shared_x.transpose();
    let cs_y = &zs_x * model.dec_shared_y.transpose();
    SaeActivations {
        x_full: add_bias(&ps_x + &pu_x, &model.bias_x),
        y_full: add_bias(&ps_y + &pu_y, &model.bias_y),
        x_shared: add_bias(ps_x, &model.bias_x),
        y_shared: add_bias(ps_y, &model.bias_y),
        x_mix: add_bias(&cs_x + &pu_x, &model.bias_x),
        y_mix: add_bias(&cs_y + &pu_y, &model.bias_y),
        x_cross: add_bias(cs_x, &model.bias_x),
        y_cross: add_bias(cs_y, &model.bias_y),
        zs_x,
        zu_x,
        zs_y,
        zu_y,
    }
}

/// Forward pass over paired standardized rows.
pub fn sae_forward(model: &SaeModel, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<SaeActivations> {
    check_batch(model, x, y)?;
    Ok(assemble(
        model,
        model.enc_shared_x.forward(x),
        model.enc_unique_x.forward(x),
        model.enc_shared_y.forward(y),
        model.enc_unique_y.forward(y),
    ))
}

pub(crate) fn forward_cached(model: &SaeModel, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (SaeActivations, EncoderCaches) {
    let (zs_x, sx) = model.enc_shared_x.forward_cached(x);
    let (zu_x, ux) = model.enc_unique_x.forward_cached(x);
    let (zs_y, sy) = model.enc_shared_y.forward_cached(y);
    let (zu_y, uy) = model.enc_unique_y.forward_cached(y);
    (assemble(model, zs_x, zu_x, zs_y, zu_y), EncoderCaches { sx, ux, sy, uy })
}
