//! Python bindings. Configurations and results cross the boundary as JSON
//! strings; coordinates as lists of lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

pub mod bridge;

fn py_err(e: gibbslat::Error) -> PyErr {
    PyValueError::new_err(format!("{e} (exit code {})", e.exit_code()))
}

/// Simulates replicate `replicate` of cell `cell` observed on `[-ell, ell]^d`
/// (largest configured window when omitted). Returns a JSON object with
/// `sites`, `displacements`, `points`, `shift`, `window` and `seed`.
#[pyfunction]
#[pyo3(signature = (config_json, cell=0, replicate=0, ell=None))]
fn simulate(config_json: &str, cell: usize, replicate: u64, ell: Option<f64>) -> PyResult<String> {
    bridge::simulate(config_json, cell, replicate, ell).map_err(py_err)
}

/// Fits a pattern in the JSON layout returned by `simulate`. Returns the
/// fit as JSON.
#[pyfunction]
#[pyo3(signature = (config_json, pattern_json, cell=0))]
fn fit(config_json: &str, pattern_json: &str, cell: usize) -> PyResult<String> {
    bridge::fit(config_json, pattern_json, cell).map_err(py_err)
}

/// Runs the configured study and returns the table as CSV.
#[pyfunction]
fn run_experiment(config_json: &str) -> PyResult<String> {
    bridge::run_experiment(config_json).map_err(py_err)
}

/// `(ratios, standard_errors)` of replicated point sets observed on
/// `[-half, half]^d`.
#[pyfunction]
fn variance_curve(patterns: Vec<Vec<Vec<f64>>>, half: f64, radii: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    bridge::variance_curve(&patterns, half, &radii).map_err(py_err)
}

#[pymodule]
fn gibbslat_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(variance_curve, m)?)?;
    Ok(())
}
