//! Python module `dualdrive_py`: similarity measures, the driving metrics,
//! the planted feature generator and the routing cost model.

use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use dualdrive::features::{Branch, FeatureMatrix, FeaturePairDataset, Level, Split};
use dualdrive::scene::{self, SubScores};
use dualdrive::selection;
use dualdrive::similarity;
use dualdrive::synth::{gen_paired_features, PlantedSpec};

fn err(e: dualdrive::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Row-major nested lists to a matrix; every row must have the same length.
pub fn to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return Err("matrix must have at least one row and one column".into());
    }
    if let Some(i) = rows.iter().position(|r| r.len() != d) {
        return Err(format!("row {i} has {} columns, expected {d}", rows[i].len()));
    }
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn to_subscores(v: &[f64]) -> Result<SubScores, String> {
    let a: [f64; 10] = v
        .try_into()
        .map_err(|_| format!("expected 10 sub-scores in order {:?}, got {}", SubScores::NAMES, v.len()))?;
    Ok(SubScores::from_array(a))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    to_matrix(&rows).map_err(PyValueError::new_err)
}

fn subscores(v: Vec<f64>) -> PyResult<SubScores> {
    to_subscores(&v).map_err(PyValueError::new_err)
}

/// Linear CKA between two row-aligned feature matrices.
#[pyfunction]
fn linear_cka(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> PyResult<f64> {
    similarity::linear_cka_values(&matrix(x)?, &matrix(y)?).map_err(err)
}

/// Canonical correlations after PCA truncation and ridge whitening.
#[pyfunction]
#[pyo3(signature = (x, y, eta=0.99, ridge=1e-8))]
fn cca_spectrum(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, eta: f64, ridge: f64) -> PyResult<Vec<f64>> {
    let fx = FeatureMatrix::from_values(matrix(x)?, Level::Backbone, Branch::Vlm).map_err(err)?;
    let fy = FeatureMatrix::from_values(matrix(y)?, Level::Backbone, Branch::Vision).map_err(err)?;
    let pair = FeaturePairDataset::new(fx, fy, Split::Train).map_err(err)?;
    Ok(similarity::cca(&pair, eta, ridge).map_err(err)?.rho)
}

/// v1 driving score from ten sub-scores (nc, dac, ddc, tlc, ep, ttc, c, hc, lk, ec).
#[pyfunction]
fn pdms(scores: Vec<f64>) -> PyResult<f64> {
    Ok(scene::pdms(&subscores(scores)?))
}

/// v2 driving score of an agent relative to the human reference.
#[pyfunction]
fn epdms(agent: Vec<f64>, human: Vec<f64>) -> PyResult<f64> {
    Ok(scene::epdms(&subscores(agent)?, &subscores(human)?))
}

/// Planted shared/unique pair; returns (x_rows, y_rows, empirical shared fractions).
#[pyfunction]
#[pyo3(signature = (n, d_x, d_y, shared_dim, unique_dim_x, unique_dim_y, shared_fraction, noise_std, seed=0))]
#[allow(clippy::too_many_arguments)]
fn gen_features(
    n: usize,
    d_x: usize,
    d_y: usize,
    shared_dim: usize,
    unique_dim_x: usize,
    unique_dim_y: usize,
    shared_fraction: f64,
    noise_std: f64,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, (f64, f64))> {
    let spec = PlantedSpec {
        n,
        d_x,
        d_y,
        shared_dim,
        unique_dim_x,
        unique_dim_y,
        shared_fraction,
        noise_std,
        seed,
    };
    let (pair, truth) = gen_paired_features(&spec).map_err(err)?;
    Ok((
        to_rows(pair.x.values()),
        to_rows(pair.y.values()),
        (truth.empirical_shared_x, truth.empirical_shared_y),
    ))
}

/// Slow-call cost giving `speedup` over always-slow at `slow_fraction`.
#[pyfunction]
#[pyo3(signature = (cost_fast=1.0, cost_score=0.05, cost_select=0.05, slow_fraction=0.15, speedup=3.2))]
fn solve_slow_cost(cost_fast: f64, cost_score: f64, cost_select: f64, slow_fraction: f64, speedup: f64) -> PyResult<f64> {
    selection::solve_slow_cost(cost_fast, cost_score, cost_select, slow_fraction, speedup).map_err(err)
}

#[pymodule]
fn dualdrive_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(linear_cka, m)?)?;
    m.add_function(wrap_pyfunction!(cca_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(pdms, m)?)?;
    m.add_function(wrap_pyfunction!(epdms, m)?)?;
    m.add_function(wrap_pyfunction!(gen_features, m)?)?;
    m.add_function(wrap_pyfunction!(solve_slow_cost, m)?)?;
    Ok(())
}
