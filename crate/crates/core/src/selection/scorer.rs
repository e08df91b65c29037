//! Learned sub-score predictor: waypoint embedding, one cross-attention
//! read over scene tokens and one small head per component.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::candidates::{argmax_first, CandidateSet};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Adam, AdamConfig, Dense, Mlp, MlpCache, Parameters};
use crate::rng::{self, Stream};
use crate::scene::geometry::{wrap_angle, Polyline, P2};
use crate::scene::{compute_subscores, pdms, KernelConfig, MetricVersion, Scene, SubScores, Trajectory};

pub const NUM_COMPONENTS: usize = 10;
/// Index of ep in `SubScores::to_array`; trained with squared error.
const EP: usize = 4;
pub const TOKEN_DIM: usize = 9;
const CENTERLINE_SAMPLES: usize = 8;
const CENTERLINE_SPACING: f64 = 10.0;

/// Anything that predicts sub-scores for a trajectory in a scene.
pub trait SubScorePredictor {
    fn predict(&self, traj: &Trajectory, scene: &Scene) -> Result<SubScores>;
}

/// Exact sub-scores from the scene kernels.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruthScorer {
    pub version: MetricVersion,
    pub kernel: KernelConfig,
}

impl Default for GroundTruthScorer {
    fn default() -> Self {
        GroundTruthScorer {
            version: MetricVersion::V1,
            kernel: KernelConfig::default(),
        }
    }
}

impl SubScorePredictor for GroundTruthScorer {
    fn predict(&self, traj: &Trajectory, scene: &Scene) -> Result<SubScores> {
        compute_subscores(traj, scene, self.version, &self.kernel)
    }
}

/// PDMS composition over predicted components.
pub fn meta_score(predicted: &SubScores) -> f64 {
    pdms(predicted)
}

/// Highest meta-score candidate, ties to the lowest index.
pub fn select<P: SubScorePredictor + ?Sized>(c: &CandidateSet, scorer: &P, scene: &Scene) -> Result<(usize, f64)> {
    if c.is_empty() {
        return Err(Error::InvalidArgument("empty candidate set".into()));
    }
    let m = c
        .trajectories
        .iter()
        .map(|t| Ok(meta_score(&scorer.predict(t, scene)?)))
        .collect::<Result<Vec<f64>>>()?;
    let i = argmax_first(&m);
    Ok((i, m[i]))
}

fn to_ego(scene: &Scene, p: P2) -> P2 {
    let (s, c) = scene.ego_start.theta.sin_cos();
    let d = [p[0] - scene.ego_start.x, p[1] - scene.ego_start.y];
    [c * d[0] + s * d[1], -s * d[0] + c * d[1]]
}

/// Waypoints in the ego start frame, flattened to one row.
pub fn trajectory_input(traj: &Trajectory, scene: &Scene) -> DMatrix<f64> {
    let mut row = Vec::with_capacity(3 * traj.len());
    for w in &traj.waypoints {
        let p = to_ego(scene, [w[0], w[1]]);
        row.extend([p[0] / 20.0, p[1] / 2.0, wrap_angle(w[2] - scene.ego_start.theta)]);
    }
    DMatrix::from_row_slice(1, row.len(), &row)
}

fn boundary_clearance(scene: &Scene) -> f64 {
    let p = scene.ego_start.position();
    let n = scene.drivable.len();
    (0..n)
        .map(|i| {
            let (a, b) = (scene.drivable[i], scene.drivable[(i + 1) % n]);
            let ab = [b[0] - a[0], b[1] - a[1]];
            let len2 = ab[0] * ab[0] + ab[1] * ab[1];
            let t = if len2 > 0.0 {
                (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            (p[0] - a[0] - t * ab[0]).hypot(p[1] - a[1] - t * ab[1])
        })
        .fold(f64::INFINITY, f64::min)
}

/// One row per agent, per centerline sample and one clearance row. The last
/// three columns one-hot encode the token type.
pub fn scene_tokens(scene: &Scene) -> Result<DMatrix<f64>> {
    let mut rows: Vec<[f64; TOKEN_DIM]> = Vec::new();
    let th = scene.ego_start.theta;
    let (s, c) = th.sin_cos();
    for a in &scene.agents {
        let p = to_ego(scene, a.positions[0]);
        let v = a.velocity(0, scene.expert.dt);
        let v = [c * v[0] + s * v[1], -s * v[0] + c * v[1]];
        rows.push([p[0] / 20.0, p[1] / 5.0, v[0] / 10.0, v[1] / 10.0, a.length / 5.0, a.width / 5.0, 1.0, 0.0, 0.0]);
    }
    let line = Polyline::new(&scene.centerline)?;
    let s0 = line.project(scene.ego_start.position()).s;
    for i in 0..CENTERLINE_SAMPLES {
        let (p, h) = line.point_at(s0 + CENTERLINE_SPACING * i as f64);
        let q = to_ego(scene, p);
        let dh = wrap_angle(h - th);
        rows.push([q[0] / 20.0, q[1] / 5.0, dh.cos(), dh.sin(), 0.0, 0.0, 0.0, 1.0, 0.0]);
    }
    rows.push([boundary_clearance(scene) / 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    Ok(DMatrix::from_fn(rows.len(), TOKEN_DIM, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerConfig {
    pub seed: u64,
    pub d_score: usize,
    pub head_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Loss weight per component, in `SubScores::to_array` order.
    pub lambda: [f64; NUM_COMPONENTS],
    pub horizon: usize,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            seed: 0,
            d_score: 64,
            head_hidden: 32,
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            lambda: [1.0; NUM_COMPONENTS],
            horizon: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerModel {
    pub horizon: usize,
    pub embed: Mlp,
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub heads: Vec<Mlp>,
}

impl Parameters for ScorerModel {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.embed.visit(f);
        self.query.visit(f);
        self.key.visit(f);
        self.value.visit(f);
        for h in &self.heads {
            h.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.embed.visit_mut(f);
        self.query.visit_mut(f);
        self.key.visit_mut(f);
        self.value.visit_mut(f);
        for h in &mut self.heads {
            h.visit_mut(f);
        }
    }
}

/// One prepared example: trajectory row, scene tokens and targets.
#[derive(Debug, Clone)]
pub struct ScorerSample {
    pub input: DMatrix<f64>,
    pub tokens: DMatrix<f64>,
    pub target: [f64; NUM_COMPONENTS],
}

impl ScorerSample {
    pub fn new(traj: &Trajectory, scene: &Scene, target: &SubScores) -> Result<Self> {
        Ok(ScorerSample {
            input: trajectory_input(traj, scene),
            tokens: scene_tokens(scene)?,
            target: target.to_array(),
        })
    }
}

struct AttnCache {
    k: DMatrix<f64>,
    v: DMatrix<f64>,
    q: DMatrix<f64>,
    a: Vec<f64>,
}

struct Forward {
    emb_cache: MlpCache,
    e: DMatrix<f64>,
    attn: Vec<AttnCache>,
    head_caches: Vec<MlpCache>,
    /// B x components logits.
    logits: DMatrix<f64>,
}

impl ScorerModel {
    pub fn init(cfg: &ScorerConfig) -> Self {
        let mut r = rng::stream(cfg.seed, Stream::ScorerInit, 0);
        let d = cfg.d_score;
        ScorerModel {
            horizon: cfg.horizon,
            embed: Mlp::init(&[3 * cfg.horizon, d, d], &mut r),
            query: Dense::init(d, d, 1.0, &mut r),
            key: Dense::init(TOKEN_DIM, d, 1.0, &mut r),
            value: Dense::init(TOKEN_DIM, d, 1.0, &mut r),
            heads: (0..NUM_COMPONENTS).map(|_| Mlp::init(&[d, cfg.head_hidden, 1], &mut r)).collect(),
        }
    }

    fn zeros_like(&self) -> Self {
        ScorerModel {
            horizon: self.horizon,
            embed: self.embed.zeros_like(),
            query: Dense::zeros(self.query.input_dim(), self.query.output_dim()),
            key: Dense::zeros(self.key.input_dim(), self.key.output_dim()),
            value: Dense::zeros(self.value.input_dim(), self.value.output_dim()),
            heads: self.heads.iter().map(|h| h.zeros_like()).collect(),
        }
    }

    fn check(&self, s: &ScorerSample) -> Result<()> {
        if s.input.ncols() != 3 * self.horizon {
            return Err(Error::DimensionMismatch {
                what: "scorer waypoint input",
                expected: 3 * self.horizon,
                got: s.input.ncols(),
            });
        }
        Ok(())
    }

    fn forward(&self, batch: &[&ScorerSample]) -> Forward {
        let d = self.query.output_dim();
        let x = DMatrix::from_fn(batch.len(), 3 * self.horizon, |i, j| batch[i].input[(0, j)]);
        let (e, emb_cache) = self.embed.forward_cached(&x);
        let mut h = e.clone();
        let mut attn = Vec::with_capacity(batch.len());
        let scale = 1.0 / (d as f64).sqrt();
        for (i, s) in batch.iter().enumerate() {
            let ei = e.rows(i, 1).into_owned();
            let q = self.query.forward(&ei);
            let k = self.key.forward(&s.tokens);
            let v = self.value.forward(&s.tokens);
            let logits: Vec<f64> = (0..k.nrows()).map(|j| k.row(j).dot(&q.row(0)) * scale).collect();
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = ex.iter().sum();
            let a: Vec<f64> = ex.iter().map(|v| v / z).collect();
            for (j, aj) in a.iter().enumerate() {
                for c in 0..d {
                    h[(i, c)] += aj * v[(j, c)];
                }
            }
            attn.push(AttnCache { k, v, q, a });
        }
        let mut logits = DMatrix::zeros(batch.len(), NUM_COMPONENTS);
        let mut head_caches = Vec::with_capacity(NUM_COMPONENTS);
        for (m, head) in self.heads.iter().enumerate() {
            let (z, c) = head.forward_cached(&h);
            logits.set_column(m, &z.column(0));
            head_caches.push(c);
        }
        Forward {
            emb_cache,
            e,
            attn,
            head_caches,
            logits,
        }
    }

    /// Predicted components: probabilities, and ep in [0, 1].
    pub fn predict_sample(&self, s: &ScorerSample) -> Result<[f64; NUM_COMPONENTS]> {
        self.check(s)?;
        let f = self.forward(&[s]);
        let mut out = [0.0; NUM_COMPONENTS];
        for (m, o) in out.iter_mut().enumerate() {
            *o = sigmoid(f.logits[(0, m)]);
        }
        Ok(out)
    }
}

impl SubScorePredictor for ScorerModel {
    fn predict(&self, traj: &Trajectory, scene: &Scene) -> Result<SubScores> {
        let s = ScorerSample {
            input: trajectory_input(traj, scene),
            tokens: scene_tokens(scene)?,
            target: [0.0; NUM_COMPONENTS],
        };
        Ok(SubScores::from_array(self.predict_sample(&s)?))
    }
}

/// Weighted loss of one batch and dL/dlogit. Cross-entropy for every
/// component except ep, which uses squared error on the probability.
fn loss_terms(logits: &DMatrix<f64>, batch: &[&ScorerSample], lambda: &[f64; NUM_COMPONENTS]) -> (f64, DMatrix<f64>) {
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut g = DMatrix::zeros(batch.len(), NUM_COMPONENTS);
    for (i, s) in batch.iter().enumerate() {
        for m in 0..NUM_COMPONENTS {
            let z = logits[(i, m)];
            let y = s.target[m];
            let p = sigmoid(z);
            if m == EP {
                loss += lambda[m] * (p - y).powi(2);
                g[(i, m)] = lambda[m] * 2.0 * (p - y) * p * (1.0 - p) / n;
            } else {
                loss += lambda[m] * (z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z);
                g[(i, m)] = lambda[m] * (p - y) / n;
            }
        }
    }
    (loss / n, g)
}

fn backward(model: &ScorerModel, batch: &[&ScorerSample], f: &Forward, dlogits: &DMatrix<f64>) -> ScorerModel {
    let mut grad = model.zeros_like();
    let d = model.query.output_dim();
    let mut dh = DMatrix::zeros(batch.len(), d);
    for (m, head) in model.heads.iter().enumerate() {
        let dz = dlogits.columns(m, 1).into_owned();
        dh += head.backward(&f.head_caches[m], &dz, &mut grad.heads[m]);
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut de = dh.clone();
    for (i, s) in batch.iter().enumerate() {
        let c = &f.attn[i];
        let dc = dh.rows(i, 1).into_owned();
        let a = DMatrix::from_column_slice(c.a.len(), 1, &c.a);
        // context = a^T V
        let dv = &a * &dc;
        let da = &c.v * dc.transpose();
        let dot = a.dot(&da);
        let ds = DMatrix::from_fn(c.a.len(), 1, |j, _| c.a[j] * (da[(j, 0)] - dot));
        let dk = &ds * &c.q * scale;
        let dq = ds.transpose() * &c.k * scale;
        model.key.backward(&s.tokens, &dk, &mut grad.key);
        model.value.backward(&s.tokens, &dv, &mut grad.value);
        let ei = f.e.rows(i, 1).into_owned();
        let de_q = model.query.backward(&ei, &dq, &mut grad.query);
        let mut row = de.row_mut(i);
        row += de_q.row(0);
    }
    model.embed.backward(&f.emb_cache, &de, &mut grad.embed);
    grad
}

/// Mean weighted loss over a sample set.
pub fn scorer_loss(model: &ScorerModel, samples: &[ScorerSample], lambda: &[f64; NUM_COMPONENTS]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty scorer sample set".into()));
    }
    let mut total = 0.0;
    for chunk in samples.chunks(256) {
        let refs: Vec<&ScorerSample> = chunk.iter().collect();
        for s in &refs {
            model.check(s)?;
        }
        let f = model.forward(&refs);
        total += loss_terms(&f.logits, &refs, lambda).0 * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScorerHistory {
    pub train_loss: Vec<f64>,
}

pub fn scorer_train(samples: &[ScorerSample], cfg: &ScorerConfig) -> Result<(ScorerModel, ScorerHistory)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("scorer training needs at least one example".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.d_score == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument("scorer config needs positive epochs, batch size, width and lr".into()));
    }
    let mut model = ScorerModel::init(cfg);
    for s in samples {
        model.check(s)?;
    }
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        model.num_params(),
    );
    let mut history = ScorerHistory::default();
    for epoch in 0..cfg.epochs {
        let order = rng::permutation(samples.len(), &mut rng::stream(cfg.seed, Stream::ScorerBatches, epoch as u64));
        let mut acc = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&ScorerSample> = idx.iter().map(|&i| &samples[i]).collect();
            let f = model.forward(&batch);
            let (loss, dl) = loss_terms(&f.logits, &batch, &cfg.lambda);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    term: "scorer loss".into(),
                });
            }
            let grad = backward(&model, &batch, &f, &dl);
            adam.step(&mut model, &grad);
            acc += loss * idx.len() as f64;
        }
        history.train_loss.push(acc / samples.len() as f64);
        log::debug!("scorer epoch {} loss {:.6}", epoch + 1, acc / samples.len() as f64);
    }
    Ok((model, history))
}
