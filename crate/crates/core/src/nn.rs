//! Small dense networks with a hand-written backward pass and an Adam
//! optimizer. Rows are samples throughout: a layer maps `B x in` to `B x out`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Anything that exposes its trainable parameters as a fixed sequence of
/// flat slices. Gradients are stored in a value of the same type so both
/// sequences line up.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |s| n += s.len());
        n
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        self.visit(&mut |s| v.extend_from_slice(s));
        v
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        self.visit_mut(&mut |s| {
            s.copy_from_slice(&flat[at..at + s.len()]);
            at += s.len();
        });
        assert_eq!(at, flat.len(), "flat parameter length mismatch");
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }
}

/// Fully connected layer `y = x W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// in x out.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            w: DMatrix::zeros(input, output),
            b: DVector::zeros(output),
        }
    }

    /// Gaussian weights with standard deviation `gain / sqrt(in)`, zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, gain: f64, rng: &mut R) -> Self {
        let std = gain / (input as f64).sqrt();
        let w = DMatrix::from_fn(input, output, |_, _| std * rng.sample::<f64, _>(StandardNormal));
        Dense {
            w,
            b: DVector::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * &self.w;
        for mut row in y.row_iter_mut() {
            row += self.b.transpose();
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns dL/dx.
    pub fn backward(&self, x: &DMatrix<f64>, dy: &DMatrix<f64>, grad: &mut Dense) -> DMatrix<f64> {
        grad.w += x.tr_mul(dy);
        for row in dy.row_iter() {
            grad.b += row.transpose();
        }
        dy * self.w.transpose()
    }
}

impl Parameters for Dense {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(self.w.as_slice());
        f(self.b.as_slice());
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self.w.as_mut_slice());
        f(self.b.as_mut_slice());
    }
}

/// Stack of dense layers with ReLU between them and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Values kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<DMatrix<f64>>,
}

impl MlpCache {
    pub fn pre_activations(&self) -> &[DMatrix<f64>] {
        &self.pre
    }
}

pub fn relu(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v.max(0.0))
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`. Hidden layers use gain sqrt(2), the output
    /// layer gain 1.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output sizes");
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i == last { 1.0 } else { std::f64::consts::SQRT_2 };
                Dense::init(w[0], w[1], gain, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self.layers.iter().map(|l| Dense::zeros(l.input_dim(), l.output_dim())).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i < last {
                h.apply(|v| *v = v.max(0.0));
            }
        }
        h
    }

    pub fn forward_cached(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            inputs.push(h);
            if i < last {
                h = relu(&z);
                pre.push(z);
            } else {
                h = z;
            }
        }
        (h, MlpCache { inputs, pre })
    }

    /// Accumulates gradients into `grad` and returns dL/dx.
    pub fn backward(&self, cache: &MlpCache, dout: &DMatrix<f64>, grad: &mut Mlp) -> DMatrix<f64> {
        let mut d = dout.clone();
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                d.zip_apply(&cache.pre[i], |g, z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            d = self.layers[i].backward(&cache.inputs[i], &d, &mut grad.layers[i]);
        }
        d
    }
}

impl Parameters for Mlp {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        for l in &self.layers {
            l.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for l in &mut self.layers {
            l.visit_mut(f);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, num_params: usize) -> Self {
        Adam {
            cfg,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let g = grads.to_flat();
        assert_eq!(g.len(), self.m.len(), "optimizer sized for a different model");
        let (m, v) = (&mut self.m, &mut self.v);
        let mut at = 0;
        params.visit_mut(&mut |s| {
            for p in s.iter_mut() {
                let gi = g[at];
                m[at] = beta1 * m[at] + (1.0 - beta1) * gi;
                v[at] = beta2 * v[at] + (1.0 - beta2) * gi * gi;
                let mh = m[at] / bc1;
                let vh = v[at] / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
                at += 1;
            }
        });
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Central finite-difference gradient of `f` with respect to the flat
/// parameters of `model`.
pub fn finite_difference<P: Parameters + Clone>(model: &P, h: f64, f: impl Fn(&P) -> f64) -> Vec<f64> {
    let base = model.to_flat();
    let mut probe = model.clone();
    let mut out = vec![0.0; base.len()];
    let mut work = base.clone();
    for i in 0..base.len() {
        work[i] = base[i] + h;
        probe.set_flat(&work);
        let up = f(&probe);
        work[i] = base[i] - h;
        probe.set_flat(&work);
        let down = f(&probe);
        work[i] = base[i];
        out[i] = (up - down) / (2.0 * h);
    }
    out
}

/// ||a - b|| / max(||a||, ||b||, floor).
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}
