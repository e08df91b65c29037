//! Dense helpers shared by the feature, similarity and autoencoder modules.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

pub fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let means = column_means(m);
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

/// Sample covariance with the (n-1) normalisation of an already centered
/// matrix.
pub fn covariance(centered: &DMatrix<f64>) -> DMatrix<f64> {
    let n = centered.nrows();
    let mut c = centered.tr_mul(centered) / (n as f64 - 1.0);
    symmetrize(&mut c);
    c
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Each eigenvector is signed so that its largest-magnitude
/// entry is positive, which makes the basis deterministic.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let d = m.nrows();
    let mut vecs = DMatrix::zeros(d, order.len());
    let mut vals = Vec::with_capacity(order.len());
    for (k, &i) in order.iter().enumerate() {
        vals.push(eig.eigenvalues[i]);
        let mut col = eig.eigenvectors.column(i).clone_owned();
        fix_sign(&mut col);
        vecs.set_column(k, &col);
    }
    (vals, vecs)
}

fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0.0_f64;
    let mut sign = 1.0;
    for &x in v.iter() {
        if x.abs() > best + 1e-12 {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.neg_mut();
    }
}

/// Thin SVD with singular values in descending order.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v: DMatrix<f64>,
}

pub fn svd_desc(m: &DMatrix<f64>) -> SortedSvd {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mut uu = DMatrix::zeros(u.nrows(), order.len());
    let mut vv = DMatrix::zeros(v_t.ncols(), order.len());
    let mut vals = Vec::with_capacity(order.len());
    for (k, &i) in order.iter().enumerate() {
        uu.set_column(k, &u.column(i));
        vv.set_column(k, &v_t.row(i).transpose());
        vals.push(s[i]);
    }
    SortedSvd {
        u: uu,
        singular_values: vals,
        v: vv,
    }
}

/// Orthonormal basis for the column span of `q` via column-pivoted QR.
///
/// Columns are scaled to unit norm first so the drop tolerance on the
/// diagonal of R is relative. Columns whose |R_ii| falls below `tol` are
/// dropped.
pub fn orth(q: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    if q.ncols() == 0 {
        return DMatrix::zeros(q.nrows(), 0);
    }
    let mut scaled = q.clone();
    for mut c in scaled.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
    let qr = scaled.col_piv_qr();
    let r = qr.r();
    let basis = qr.q();
    let keep = (0..r.nrows().min(r.ncols()))
        .take_while(|&i| r[(i, i)].abs() >= tol)
        .count();
    basis.columns(0, keep).into_owned()
}

/// Haar-distributed random orthogonal matrix (QR of a Gaussian matrix with
/// the sign of R's diagonal folded into Q).
pub fn random_orthogonal<R: Rng>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // Row-major fill so the stream order matches the CSV layout.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    m
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, &x| a.max(x.abs()))
}

/// Frobenius distance of `m` from the identity.
pub fn identity_defect(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows();
    (m - DMatrix::<f64>::identity(d, m.ncols())).norm()
}
