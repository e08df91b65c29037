use nalgebra::{DMatrix, DVector};

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::table::{fmt_f64, Csv};

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPoint {
    pub model: String,
    pub sample_id: String,
    pub pc1: f64,
    pub pc2: f64,
}

/// Shared 2D PCA coordinates for several aligned feature sets.
#[derive(Debug, Clone)]
pub struct ProjectionTable {
    pub points: Vec<ProjectionPoint>,
    /// Coordinate-wise median per model, in input order.
    pub centers: Vec<(String, [f64; 2])>,
    /// d x 2 projection basis fitted on the concatenation.
    pub basis: DMatrix<f64>,
    pub mean: DVector<f64>,
}

impl ProjectionTable {
    pub fn to_csv(&self) -> String {
        let mut csv = Csv::new(&["model", "sample_id", "pc1", "pc2"]);
        for p in &self.points {
            csv.row([p.model.clone(), p.sample_id.clone(), fmt_f64(p.pc1), fmt_f64(p.pc2)]);
        }
        csv.into_string()
    }

    pub fn centers_csv(&self) -> String {
        let mut csv = Csv::new(&["model", "median_pc1", "median_pc2"]);
        for (m, c) in &self.centers {
            csv.row([m.clone(), fmt_f64(c[0]), fmt_f64(c[1])]);
        }
        csv.into_string()
    }

    pub fn model_points(&self, model: &str) -> impl Iterator<Item = &ProjectionPoint> {
        let model = model.to_string();
        self.points.iter().filter(move |p| p.model == model)
    }
}

/// Fits one 2D PCA on the row-concatenation of all inputs and projects each
/// model's rows into it.
pub fn project_2d(aligned: &[(String, FeatureMatrix)]) -> Result<ProjectionTable> {
    let Some((_, first)) = aligned.first() else {
        return Err(Error::TooFewSamples { got: 0, need: 3 });
    };
    let d = first.d();
    let total: usize = aligned.iter().map(|(_, m)| m.n()).sum();
    if total < 3 {
        return Err(Error::TooFewSamples { got: total, need: 3 });
    }
    for (_, m) in aligned {
        if m.d() != d {
            return Err(Error::DimensionMismatch {
                what: "projection feature width",
                expected: d,
                got: m.d(),
            });
        }
    }
    let mut stacked = DMatrix::zeros(total, d);
    let mut r = 0;
    for (_, m) in aligned {
        stacked.rows_mut(r, m.n()).copy_from(m.values());
        r += m.n();
    }
    let mean = linalg::column_means(&stacked);
    let centered = linalg::center_columns(&stacked);
    let (_, vecs) = linalg::sym_eigen_desc(&linalg::covariance(&centered));
    let mut basis = DMatrix::zeros(d, 2);
    for k in 0..d.min(2) {
        basis.set_column(k, &vecs.column(k));
    }
    let coords = centered * &basis;

    let mut points = Vec::with_capacity(total);
    let mut centers = Vec::with_capacity(aligned.len());
    let mut r = 0;
    for (label, m) in aligned {
        let mut c1 = Vec::with_capacity(m.n());
        let mut c2 = Vec::with_capacity(m.n());
        for (i, id) in m.sample_ids().iter().enumerate() {
            let (a, b) = (coords[(r + i, 0)], coords[(r + i, 1)]);
            c1.push(a);
            c2.push(b);
            points.push(ProjectionPoint {
                model: label.clone(),
                sample_id: id.clone(),
                pc1: a,
                pc2: b,
            });
        }
        centers.push((label.clone(), [median(&mut c1), median(&mut c2)]));
        r += m.n();
    }
    Ok(ProjectionTable {
        points,
        centers,
        basis,
        mean,
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
