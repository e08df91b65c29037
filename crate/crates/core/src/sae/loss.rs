use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::model::{check_batch, forward_cached, sae_forward, SaeActivations, SaeModel};
use super::SaeLossWeights;
use crate::error::{Error, Result};
use crate::linalg;

/// Added to batch variances before the square root in the VICReg terms.
pub const VIC_STD_EPS: f64 = 1e-4;

/// Paired standardized rows plus, for raw-space reconstruction losses, the
/// per-dimension training variances that undo the standardization.
#[derive(Debug, Clone, Copy)]
pub struct SaeBatch<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a DMatrix<f64>,
    pub raw_var_x: Option<&'a [f64]>,
    pub raw_var_y: Option<&'a [f64]>,
}

impl<'a> SaeBatch<'a> {
    pub fn new(x: &'a DMatrix<f64>, y: &'a DMatrix<f64>) -> Self {
        SaeBatch {
            x,
            y,
            raw_var_x: None,
            raw_var_y: None,
        }
    }
}

/// Every loss term, unweighted, plus the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub sh: f64,
    pub cross: f64,
    pub inv: f64,
    /// var(z_s^x) + var(z_s^y) hinge terms.
    pub var: f64,
    /// cov(z_s^x) + cov(z_s^y) off-diagonal terms.
    pub cov: f64,
    /// alpha inv + beta var + gamma cov.
    pub vic: f64,
    pub ort: f64,
    pub sp: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [(&'static str, f64); 10] {
        [
            ("rec", self.rec),
            ("sh", self.sh),
            ("cross", self.cross),
            ("inv", self.inv),
            ("var", self.var),
            ("cov", self.cov),
            ("vic", self.vic),
            ("ort", self.ort),
            ("sp", self.sp),
            ("total", self.total),
        ]
    }

    pub(crate) fn scaled_add(&mut self, other: &LossBreakdown, s: f64) {
        self.rec += s * other.rec;
        self.sh += s * other.sh;
        self.cross += s * other.cross;
        self.inv += s * other.inv;
        self.var += s * other.var;
        self.cov += s * other.cov;
        self.vic += s * other.vic;
        self.ort += s * other.ort;
        self.sp += s * other.sp;
        self.total += s * other.total;
    }
}

fn mse_weights<'a>(raw: Option<&'a [f64]>, use_raw: bool, d: usize, branch: &str) -> Result<Option<&'a [f64]>> {
    if !use_raw {
        return Ok(None);
    }
    match raw {
        Some(w) if w.len() == d => Ok(Some(w)),
        Some(w) => Err(Error::DimensionMismatch {
            what: "raw-space variance weights",
            expected: d,
            got: w.len(),
        }),
        None => Err(Error::InvalidArgument(format!(
            "use_raw_mse needs the {branch} standardization statistics"
        ))),
    }
}

/// (1/(B d)) sum_ij w_j r_ij^2 and its gradient with respect to r.
fn wmse(r: &DMatrix<f64>, w: Option<&[f64]>) -> (f64, DMatrix<f64>) {
    let scale = 1.0 / (r.nrows() * r.ncols()) as f64;
    let mut g = r * (2.0 * scale);
    let mut v = 0.0;
    for j in 0..r.ncols() {
        let wj = w.map_or(1.0, |w| w[j]);
        let mut col = g.column_mut(j);
        col *= wj;
        v += wj * r.column(j).norm_squared();
    }
    (v * scale, g)
}

struct BatchNorm {
    n: DMatrix<f64>,
    s: DVector<f64>,
    c: DMatrix<f64>,
}

fn batch_norm(z: &DMatrix<f64>) -> BatchNorm {
    let b = z.nrows() as f64;
    let c = linalg::center_columns(z);
    let s = DVector::from_iterator(
        z.ncols(),
        c.column_iter().map(|col| (col.norm_squared() / (b - 1.0) + VIC_STD_EPS).sqrt()),
    );
    let mut n = c.clone();
    for (j, mut col) in n.column_iter_mut().enumerate() {
        col /= s[j];
    }
    BatchNorm { n, s, c }
}

/// Gradient through the per-dimension standardization given dL/dn.
fn batch_norm_backward(bn: &BatchNorm, g: &DMatrix<f64>) -> DMatrix<f64> {
    let b = g.nrows() as f64;
    let mut out = DMatrix::zeros(g.nrows(), g.ncols());
    for j in 0..g.ncols() {
        let gj = g.column(j);
        let nj = bn.n.column(j);
        let mean = gj.mean();
        let proj = gj.dot(&nj) / (b - 1.0);
        let mut col = out.column_mut(j);
        for i in 0..g.nrows() {
            col[i] = (gj[i] - mean - nj[i] * proj) / bn.s[j];
        }
    }
    out
}

fn var_hinge(bn: &BatchNorm, margin: f64) -> (f64, DMatrix<f64>) {
    let b = bn.c.nrows() as f64;
    let ds = bn.s.len() as f64;
    let mut v = 0.0;
    let mut g = DMatrix::zeros(bn.c.nrows(), bn.c.ncols());
    for j in 0..bn.s.len() {
        let gap = (margin - bn.s[j]).max(0.0);
        v += gap * gap;
        if gap > 0.0 {
            // dL/ds = -2 gap / d_s, ds/dz = c / (s (B - 1)).
            let coef = -2.0 * gap / ds / (bn.s[j] * (b - 1.0));
            g.column_mut(j).copy_from(&(bn.c.column(j) * coef));
        }
    }
    (v / ds, g)
}

fn cov_offdiag(z: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let b = z.nrows() as f64;
    let ds = z.ncols() as f64;
    let zc = linalg::center_columns(z);
    let mut c = zc.tr_mul(&zc) / (b - 1.0);
    c.fill_diagonal(0.0);
    let v = c.norm_squared() / ds;
    let g = &zc * c * (4.0 / (ds * (b - 1.0)));
    (v, g)
}

/// ||Cov(a, b)||_F^2 and gradients for a and b.
fn cross_cov(a: &DMatrix<f64>, bm: &DMatrix<f64>) -> (f64, DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows() as f64;
    let ac = linalg::center_columns(a);
    let bc = linalg::center_columns(bm);
    let c = ac.tr_mul(&bc) / (n - 1.0);
    let ga = &bc * c.transpose() * (2.0 / (n - 1.0));
    let gb = &ac * &c * (2.0 / (n - 1.0));
    (c.norm_squared(), ga, gb)
}

fn l1_mean(z: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let b = z.nrows() as f64;
    let v = z.iter().map(|v| v.abs()).sum::<f64>() / b;
    let g = z.map(|v| if v > 0.0 { 1.0 / b } else if v < 0.0 { -1.0 / b } else { 0.0 });
    (v, g)
}

struct TermGrads {
    breakdown: LossBreakdown,
    /// dL/d(reconstruction) for x_full, x_shared, x_cross and the y analogues.
    g_xf: DMatrix<f64>,
    g_xs: DMatrix<f64>,
    g_xc: DMatrix<f64>,
    g_yf: DMatrix<f64>,
    g_ys: DMatrix<f64>,
    g_yc: DMatrix<f64>,
    /// Direct latent gradients from the batch-statistic terms.
    g_zsx: DMatrix<f64>,
    g_zux: DMatrix<f64>,
    g_zsy: DMatrix<f64>,
    g_zuy: DMatrix<f64>,
}

fn evaluate(a: &SaeActivations, batch: &SaeBatch<'_>, w: &SaeLossWeights) -> Result<TermGrads> {
    let bsz = batch.x.nrows();
    if bsz < 2 {
        return Err(Error::BatchTooSmall(bsz));
    }
    let wx = mse_weights(batch.raw_var_x, w.use_raw_mse, batch.x.ncols(), "x")?;
    let wy = mse_weights(batch.raw_var_y, w.use_raw_mse, batch.y.ncols(), "y")?;

    let (rec_x, g_xf) = wmse(&(&a.x_full - batch.x), wx);
    let (rec_y, g_yf) = wmse(&(&a.y_full - batch.y), wy);
    let (sh_x, g_xs) = wmse(&(&a.x_shared - batch.x), wx);
    let (sh_y, g_ys) = wmse(&(&a.y_shared - batch.y), wy);
    let (cr_x, g_xc) = wmse(&(&a.x_cross - batch.x), wx);
    let (cr_y, g_yc) = wmse(&(&a.y_cross - batch.y), wy);

    let bn_x = batch_norm(&a.zs_x);
    let bn_y = batch_norm(&a.zs_y);
    let diff = &bn_x.n - &bn_y.n;
    let inv = diff.norm_squared() / bsz as f64;
    let g_diff = &diff * (2.0 / bsz as f64);
    let g_inv_x = batch_norm_backward(&bn_x, &g_diff);
    let g_inv_y = batch_norm_backward(&bn_y, &(-&g_diff));
    let (var_x, g_var_x) = var_hinge(&bn_x, w.vic_margin);
    let (var_y, g_var_y) = var_hinge(&bn_y, w.vic_margin);
    let (cov_x, g_cov_x) = cov_offdiag(&a.zs_x);
    let (cov_y, g_cov_y) = cov_offdiag(&a.zs_y);
    let (ort_x, g_ort_sx, g_ort_ux) = cross_cov(&a.zs_x, &a.zu_x);
    let (ort_y, g_ort_sy, g_ort_uy) = cross_cov(&a.zs_y, &a.zu_y);
    let (sp_x, g_sp_x) = l1_mean(&a.zu_x);
    let (sp_y, g_sp_y) = l1_mean(&a.zu_y);

    let vic = w.vic_alpha * inv + w.vic_beta * (var_x + var_y) + w.vic_gamma * (cov_x + cov_y);
    let mut bd = LossBreakdown {
        rec: rec_x + rec_y,
        sh: sh_x + sh_y,
        cross: cr_x + cr_y,
        inv,
        var: var_x + var_y,
        cov: cov_x + cov_y,
        vic,
        ort: ort_x + ort_y,
        sp: sp_x + sp_y,
        total: 0.0,
    };
    bd.total = w.rec * bd.rec + w.sh * bd.sh + w.cross * bd.cross + w.vic * bd.vic + w.ort * bd.ort + w.sp * bd.sp;

    let lv = w.vic;
    let g_zsx = (g_inv_x * w.vic_alpha + g_var_x * w.vic_beta + g_cov_x * w.vic_gamma) * lv + g_ort_sx * w.ort;
    let g_zsy = (g_inv_y * w.vic_alpha + g_var_y * w.vic_beta + g_cov_y * w.vic_gamma) * lv + g_ort_sy * w.ort;
    let g_zux = g_ort_ux * w.ort + g_sp_x * w.sp;
    let g_zuy = g_ort_uy * w.ort + g_sp_y * w.sp;
    Ok(TermGrads {
        breakdown: bd,
        g_xf: g_xf * w.rec,
        g_xs: g_xs * w.sh,
        g_xc: g_xc * w.cross,
        g_yf: g_yf * w.rec,
        g_ys: g_ys * w.sh,
        g_yc: g_yc * w.cross,
        g_zsx,
        g_zux,
        g_zsy,
        g_zuy,
    })
}

/// Evaluates every loss term for one batch.
pub fn sae_loss(model: &SaeModel, batch: &SaeBatch<'_>, weights: &SaeLossWeights) -> Result<LossBreakdown> {
    let a = sae_forward(model, batch.x, batch.y)?;
    Ok(evaluate(&a, batch, weights)?.breakdown)
}

/// Loss terms plus the gradient of the weighted total with respect to every
/// model parameter.
pub fn sae_loss_and_grad(
    model: &SaeModel,
    batch: &SaeBatch<'_>,
    weights: &SaeLossWeights,
) -> Result<(LossBreakdown, SaeModel)> {
    check_batch(model, batch.x, batch.y)?;
    let (a, caches) = forward_cached(model, batch.x, batch.y);
    let t = evaluate(&a, batch, weights)?;
    let mut grad = model.zeros_like();

    // Decoders: x_full = zs Ws^T + zu Wu^T + b, x_shared = zs Ws^T + b,
    // x_cross = zs_y Ws^T + b.
    let g_self_x = &t.g_xf + &t.g_xs;
    let g_self_y = &t.g_yf + &t.g_ys;
    grad.dec_shared_x = g_self_x.tr_mul(&a.zs_x) + t.g_xc.tr_mul(&a.zs_y);
    grad.dec_unique_x = t.g_xf.tr_mul(&a.zu_x);
    grad.dec_shared_y = g_self_y.tr_mul(&a.zs_y) + t.g_yc.tr_mul(&a.zs_x);
    grad.dec_unique_y = t.g_yf.tr_mul(&a.zu_y);
    for g in [&g_self_x, &t.g_xc] {
        for row in g.row_iter() {
            grad.bias_x += row.transpose();
        }
    }
    for g in [&g_self_y, &t.g_yc] {
        for row in g.row_iter() {
            grad.bias_y += row.transpose();
        }
    }

    let d_zsx = &g_self_x * &model.dec_shared_x + &t.g_yc * &model.dec_shared_y + &t.g_zsx;
    let d_zsy = &g_self_y * &model.dec_shared_y + &t.g_xc * &model.dec_shared_x + &t.g_zsy;
    let d_zux = &t.g_xf * &model.dec_unique_x + &t.g_zux;
    let d_zuy = &t.g_yf * &model.dec_unique_y + &t.g_zuy;

    model.enc_shared_x.backward(&caches.sx, &d_zsx, &mut grad.enc_shared_x);
    model.enc_unique_x.backward(&caches.ux, &d_zux, &mut grad.enc_unique_x);
    model.enc_shared_y.backward(&caches.sy, &d_zsy, &mut grad.enc_shared_y);
    model.enc_unique_y.backward(&caches.uy, &d_zuy, &mut grad.enc_unique_y);
    Ok((t.breakdown, grad))
}

/// Smallest distance of the batch to a non-differentiable point of the loss:
/// ReLU pre-activations, zero unique latents, and the variance hinge corner.
pub fn kink_distance(model: &SaeModel, batch: &SaeBatch<'_>, margin: f64) -> f64 {
    let (a, caches) = forward_cached(model, batch.x, batch.y);
    let mut d = f64::INFINITY;
    for c in [&caches.sx, &caches.ux, &caches.sy, &caches.uy] {
        for p in c.pre_activations() {
            d = d.min(p.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
        }
    }
    for z in [&a.zu_x, &a.zu_y] {
        d = d.min(z.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
    }
    for z in [&a.zs_x, &a.zs_y] {
        let bn = batch_norm(z);
        d = d.min(bn.s.iter().fold(f64::INFINITY, |m, s| m.min((margin - s).abs())));
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_difference, relative_error, Parameters};
    use crate::rng::{stream, Stream};
    use crate::sae::model::tests::unit_model;
    use crate::sae::{SaeDims, LOSS_TERMS};

    fn small_dims() -> SaeDims {
        SaeDims {
            d_x: 3,
            d_y: 3,
            d_s: 2,
            d_u: 1,
            hidden: 4,
        }
    }

    /// Loop-based evaluation of each term straight from the definitions.
    fn brute_force(a: &SaeActivations, x: &DMatrix<f64>, y: &DMatrix<f64>, margin: f64) -> [f64; 7] {
        let b = x.nrows();
        let mse = |p: &DMatrix<f64>, t: &DMatrix<f64>| {
            let mut s = 0.0;
            for i in 0..t.nrows() {
                for j in 0..t.ncols() {
                    s += (p[(i, j)] - t[(i, j)]).powi(2);
                }
            }
            s / (t.nrows() * t.ncols()) as f64
        };
        let col_mean = |z: &DMatrix<f64>, j: usize| (0..b).map(|i| z[(i, j)]).sum::<f64>() / b as f64;
        let cov = |p: &DMatrix<f64>, i1: usize, q: &DMatrix<f64>, j1: usize| {
            let (mp, mq) = (col_mean(p, i1), col_mean(q, j1));
            (0..b).map(|i| (p[(i, i1)] - mp) * (q[(i, j1)] - mq)).sum::<f64>() / (b as f64 - 1.0)
        };
        let std = |z: &DMatrix<f64>, j: usize| (cov(z, j, z, j) + VIC_STD_EPS).sqrt();
        let mut inv = 0.0;
        for j in 0..a.zs_x.ncols() {
            let (mx, my, sx, sy) = (col_mean(&a.zs_x, j), col_mean(&a.zs_y, j), std(&a.zs_x, j), std(&a.zs_y, j));
            for i in 0..b {
                inv += ((a.zs_x[(i, j)] - mx) / sx - (a.zs_y[(i, j)] - my) / sy).powi(2);
            }
        }
        inv /= b as f64;
        let ds = a.zs_x.ncols() as f64;
        let var = |z: &DMatrix<f64>| (0..z.ncols()).map(|j| (margin - std(z, j)).max(0.0).powi(2)).sum::<f64>() / ds;
        let offd = |z: &DMatrix<f64>| {
            let mut s = 0.0;
            for i in 0..z.ncols() {
                for j in 0..z.ncols() {
                    if i != j {
                        s += cov(z, i, z, j).powi(2);
                    }
                }
            }
            s / ds
        };
        let ort = |p: &DMatrix<f64>, q: &DMatrix<f64>| {
            let mut s = 0.0;
            for i in 0..p.ncols() {
                for j in 0..q.ncols() {
                    s += cov(p, i, q, j).powi(2);
                }
            }
            s
        };
        let l1 = |z: &DMatrix<f64>| z.iter().map(|v| v.abs()).sum::<f64>() / b as f64;
        [
            mse(&a.x_full, x) + mse(&a.y_full, y),
            mse(&a.x_shared, x) + mse(&a.y_shared, y),
            mse(&a.x_cross, x) + mse(&a.y_cross, y),
            inv,
            var(&a.zs_x) + var(&a.zs_y),
            offd(&a.zs_x) + offd(&a.zs_y),
            ort(&a.zs_x, &a.zu_x) + ort(&a.zs_y, &a.zu_y) + 0.0 * (l1(&a.zu_x) + l1(&a.zu_y)),
        ]
    }

    #[test]
    fn terms_match_brute_force() {
        let mut rng = stream(3, Stream::SaeInit, 0);
        let m = SaeModel::init(small_dims(), &mut rng).unwrap();
        let x = linalg::gaussian_matrix(4, 3, &mut rng);
        let y = linalg::gaussian_matrix(4, 3, &mut rng);
        let w = SaeLossWeights::default();
        let l = sae_loss(&m, &SaeBatch::new(&x, &y), &w).unwrap();
        let a = sae_forward(&m, &x, &y).unwrap();
        let bf = brute_force(&a, &x, &y, w.vic_margin);
        let got = [l.rec, l.sh, l.cross, l.inv, l.var, l.cov, l.ort];
        for (g, e) in got.iter().zip(bf) {
            assert!((g - e).abs() <= 1e-12 * (1.0 + e.abs()), "{g} vs {e}");
        }
        let sp = (a.zu_x.iter().chain(a.zu_y.iter()).map(|v| v.abs()).sum::<f64>()) / 4.0;
        assert!((l.sp - sp).abs() < 1e-12);
        let vic = 25.0 * l.inv + 25.0 * l.var + l.cov;
        assert!((l.vic - vic).abs() < 1e-12);
        let total = l.rec + l.sh + l.vic + 0.1 * l.ort + 1e-3 * l.sp;
        assert!((l.total - total).abs() < 1e-12);
    }

    #[test]
    fn perfect_reconstruction_has_zero_mse_terms() {
        // No unique decoder, mirrored branches: full, shared-only and cross
        // reconstructions coincide, so targets equal to them zero all three.
        let mut m = unit_model();
        m.dec_unique_x.fill(0.0);
        m.dec_unique_y.fill(0.0);
        m.enc_shared_y = m.enc_shared_x.clone();
        m.dec_shared_y = m.dec_shared_x.clone();
        m.bias_y = m.bias_x.clone();
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let a = sae_forward(&m, &x, &x).unwrap();
        let t = evaluate(&a, &SaeBatch::new(&a.x_full, &a.y_full), &SaeLossWeights::default())
            .unwrap()
            .breakdown;
        assert_eq!((t.rec, t.sh, t.cross), (0.0, 0.0, 0.0));
    }

    #[test]
    fn identical_standardized_codes_zero_invariance_and_hinge() {
        // z columns with unit (B-1) variance before the epsilon.
        let z = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, -1.0]) * (3.0f64 / 4.0).sqrt();
        let bn = batch_norm(&z);
        let bny = batch_norm(&z);
        assert_eq!((&bn.n - &bny.n).norm(), 0.0);
        let (v, _) = var_hinge(&bn, 1.0);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn batch_of_one_is_rejected() {
        let m = unit_model();
        let x = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(
            sae_loss(&m, &SaeBatch::new(&x, &x), &SaeLossWeights::default()),
            Err(Error::BatchTooSmall(1))
        ));
    }

    #[test]
    fn raw_mse_requires_statistics_and_weights_columns() {
        let m = unit_model();
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let w = SaeLossWeights {
            use_raw_mse: true,
            ..Default::default()
        };
        assert!(sae_loss(&m, &SaeBatch::new(&x, &x), &w).is_err());
        let var = [4.0];
        let batch = SaeBatch {
            raw_var_x: Some(&var),
            raw_var_y: Some(&var),
            ..SaeBatch::new(&x, &x)
        };
        let raw = sae_loss(&m, &batch, &w).unwrap();
        let std = sae_loss(&m, &SaeBatch::new(&x, &x), &SaeLossWeights::default()).unwrap();
        assert!((raw.rec - 4.0 * std.rec).abs() < 1e-12);
    }

    /// Random model and batch away from every kink.
    pub(crate) fn smooth_point(seed: u64, w: &SaeLossWeights) -> (SaeModel, DMatrix<f64>, DMatrix<f64>) {
        for attempt in 0.. {
            let mut rng = stream(seed, Stream::SaeInit, 1000 + attempt);
            let mut m = SaeModel::init(small_dims(), &mut rng).unwrap();
            // Nonzero biases everywhere so no parameter sits at a special value.
            let mut flat = m.to_flat();
            for v in flat.iter_mut() {
                *v += 0.1 * rand::Rng::random_range(&mut rng, -1.0..1.0);
            }
            m.set_flat(&flat);
            let x = linalg::gaussian_matrix(6, 3, &mut rng);
            let y = &x * 0.5 + linalg::gaussian_matrix(6, 3, &mut rng);
            if kink_distance(&m, &SaeBatch::new(&x, &y), w.vic_margin) > 1e-3 {
                return (m, x, y);
            }
        }
        unreachable!()
    }

    #[test]
    fn every_term_matches_finite_differences() {
        for term in LOSS_TERMS {
            // A wide margin keeps the variance hinge active.
            let w = SaeLossWeights {
                vic_margin: 3.0,
                ..SaeLossWeights::only(term)
            };
            let mut worst: f64 = 0.0;
            for seed in 0..10 {
                let (m, x, y) = smooth_point(seed, &w);
                let batch = SaeBatch::new(&x, &y);
                let (_, g) = sae_loss_and_grad(&m, &batch, &w).unwrap();
                let fd = finite_difference(&m, 1e-5, |p| sae_loss(p, &batch, &w).unwrap().total);
                worst = worst.max(relative_error(&g.to_flat(), &fd, 1e-8));
            }
            assert!(worst <= 1e-4, "{term}: relative error {worst}");
        }
    }
}
