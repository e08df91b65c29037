use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{center, pca::pca_truncate_with_ridge, whiten, FeatureMatrix, FeaturePairDataset, PcaBasis};
use crate::linalg;
use crate::rng::{self, Stream};
use crate::table::{fmt_f64, Csv};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    X,
    Y,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::X => "x",
            Side::Y => "y",
        })
    }
}

/// Canonical correlations after PCA truncation and ridge whitening.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CcaResult {
    /// Descending, clipped to [0, 1].
    pub rho: Vec<f64>,
    /// k_x x k canonical directions in whitened x coordinates.
    pub a_dirs: DMatrix<f64>,
    /// k_y x k canonical directions in whitened y coordinates.
    pub b_dirs: DMatrix<f64>,
    pub basis_x: PcaBasis,
    pub basis_y: PcaBasis,
}

impl CcaResult {
    pub fn k(&self) -> usize {
        self.rho.len()
    }

    pub fn count_above(&self, tau: f64) -> usize {
        self.rho.iter().filter(|&&r| r > tau).count()
    }

    pub fn spectrum_csv(&self) -> String {
        let mut csv = Csv::new(&["index", "rho"]);
        for (i, r) in self.rho.iter().enumerate() {
            csv.row([(i + 1).to_string(), fmt_f64(*r)]);
        }
        csv.into_string()
    }
}

/// Center, truncate each side at `eta`, whiten with `ridge`, and take the
/// singular values of the whitened cross-covariance.
pub fn cca(pair: &FeaturePairDataset, eta: f64, ridge: f64) -> Result<CcaResult> {
    let xc = center(&pair.x);
    let yc = center(&pair.y);
    let basis_x = pca_truncate_with_ridge(&xc, eta, ridge)
        .map_err(|e| branch_err(e, "x"))?;
    let basis_y = pca_truncate_with_ridge(&yc, eta, ridge)
        .map_err(|e| branch_err(e, "y"))?;
    let n = pair.n();
    let need = basis_x.k().max(basis_y.k()) + 1;
    if n < need {
        return Err(Error::TooFewSamples { got: n, need });
    }
    let xw = whiten(&xc, &basis_x)?;
    let yw = whiten(&yc, &basis_y)?;
    // Whitened columns have (n-1)-normalised unit variance, so the cross
    // product divided by (n-1) is the whitened cross-covariance.
    let cross = xw.values().tr_mul(yw.values()) / (n as f64 - 1.0);
    let svd = linalg::svd_desc(&cross);
    let k = basis_x.k().min(basis_y.k());
    let rho = svd.singular_values[..k].iter().map(|r| r.clamp(0.0, 1.0)).collect();
    Ok(CcaResult {
        rho,
        a_dirs: svd.u.columns(0, k).into_owned(),
        b_dirs: svd.v.columns(0, k).into_owned(),
        basis_x,
        basis_y,
    })
}

fn branch_err(e: Error, side: &str) -> Error {
    match e {
        Error::DegenerateInput(msg) => Error::DegenerateInput(format!("branch {side}: {msg}")),
        other => other,
    }
}

/// Mean of the top-`k` canonical correlations.
pub fn cca_mean_at_k(r: &CcaResult, k: usize) -> Result<f64> {
    mean_at_k(&r.rho, k)
}

pub(crate) fn mean_at_k(rho: &[f64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("mean@k needs k >= 1".into()));
    }
    if k > rho.len() {
        return Err(Error::InvalidArgument(format!(
            "mean@{k} requested but only {} correlations exist",
            rho.len()
        )));
    }
    Ok(rho[..k].iter().sum::<f64>() / k as f64)
}

/// Share of one branch's centered original-space energy that lies in the span
/// of canonical directions with rho > tau.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignedEnergyReport {
    pub side: Side,
    pub tau: f64,
    pub count_above: usize,
    pub frac: f64,
}

impl AlignedEnergyReport {
    pub fn csv(reports: &[AlignedEnergyReport]) -> String {
        let mut csv = Csv::new(&["side", "tau", "count", "frac"]);
        for r in reports {
            csv.row([r.side.to_string(), fmt_f64(r.tau), r.count_above.to_string(), fmt_f64(r.frac)]);
        }
        csv.into_string()
    }
}

/// Maps the selected canonical directions back to original coordinates
/// (P (Lambda + eps)^{-1/2} A_I), orthonormalises them and measures
/// ||X Q||_F^2 / ||X||_F^2 on the centered matrix.
pub fn aligned_energy(m: &FeatureMatrix, r: &CcaResult, side: Side, tau: f64) -> Result<AlignedEnergyReport> {
    let (basis, dirs) = match side {
        Side::X => (&r.basis_x, &r.a_dirs),
        Side::Y => (&r.basis_y, &r.b_dirs),
    };
    if m.d() != basis.d() {
        return Err(Error::DimensionMismatch {
            what: "aligned-energy input width",
            expected: basis.d(),
            got: m.d(),
        });
    }
    let selected: Vec<usize> = (0..r.k()).filter(|&j| r.rho[j] > tau).collect();
    if selected.is_empty() {
        return Ok(AlignedEnergyReport {
            side,
            tau,
            count_above: 0,
            frac: 0.0,
        });
    }
    let a = dirs.select_columns(selected.iter());
    let q = basis.whitening_map() * a;
    let q_bar = linalg::orth(&q, 1e-10);
    let xc = linalg::center_columns(m.values());
    let full = xc.norm_squared();
    if full <= 0.0 {
        return Err(Error::DegenerateInput("aligned energy of a constant matrix".into()));
    }
    let frac = ((&xc * q_bar).norm_squared() / full).clamp(0.0, 1.0);
    Ok(AlignedEnergyReport {
        side,
        tau,
        count_above: selected.len(),
        frac,
    })
}

/// Largest leading canonical correlation over `shuffles` random re-pairings
/// of the rows (seeded). A planted correlation above this ceiling is unlikely
/// to be a sampling artefact.
pub fn permutation_null_ceiling(
    pair: &FeaturePairDataset,
    eta: f64,
    ridge: f64,
    shuffles: usize,
    seed: u64,
) -> Result<f64> {
    let mut ceiling: f64 = 0.0;
    for s in 0..shuffles {
        let mut rng = rng::stream(seed, Stream::Permutation, s as u64);
        let perm = rng::permutation(pair.n(), &mut rng);
        let y_values = pair.y.values().select_rows(perm.iter());
        let y = pair.y.with_values(y_values)?;
        let shuffled = FeaturePairDataset::new(pair.x.clone(), y, pair.split)?;
        let r = cca(&shuffled, eta, ridge)?;
        ceiling = ceiling.max(r.rho.first().copied().unwrap_or(0.0));
    }
    Ok(ceiling)
}
