//! Python bindings: closed-form helpers plus the config-driven runner.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use atlaslab::config::ExperimentConfig;
use atlaslab::drift::{pi_a_rates as rates_of, DriftSpec};
use atlaslab::local_time::psi_eps as psi;
use atlaslab::sampler::kakutani_affinity_product;

fn py_err(e: atlaslab::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn spec_of(prefix: Option<Vec<f64>>) -> PyResult<DriftSpec> {
    let spec = prefix.map_or_else(DriftSpec::atlas1, DriftSpec::new);
    spec.validate().map_err(py_err)?;
    Ok(spec)
}

/// Rates `n(2ḡ_n + a)` of the first `k` gaps under `π_a`. `prefix` defaults
/// to the Atlas drift `(1, 0, 0, …)`.
#[pyfunction]
#[pyo3(signature = (a, k, prefix=None))]
fn pi_a_rates(a: f64, k: usize, prefix: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
    let spec = spec_of(prefix)?;
    Ok(rates_of(&spec, a, k).map_err(py_err)?.rates)
}

#[pyfunction]
#[pyo3(signature = (prefix=None))]
fn a_min(prefix: Option<Vec<f64>>) -> PyResult<f64> {
    Ok(spec_of(prefix)?.a_min())
}

/// `(ψ_ε(z), ψ_ε′(z), ψ_ε″(z))`.
#[pyfunction]
fn psi_eps(z: f64, eps: f64) -> (f64, f64, f64) {
    let p = psi(z, eps);
    (p.value, p.first, p.second)
}

/// Partial products of Hellinger affinities between `π_a` and `π_{a′}`.
#[pyfunction]
#[pyo3(signature = (a, a_prime, n, prefix=None))]
fn kakutani_products(a: f64, a_prime: f64, n: usize, prefix: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
    let spec = spec_of(prefix)?;
    let ra = rates_of(&spec, a, n).map_err(py_err)?.rates;
    let rb = rates_of(&spec, a_prime, n).map_err(py_err)?.rates;
    kakutani_affinity_product(&ra, &rb).map_err(py_err)
}

/// Validate a TOML config; returns the notes `atlaslab validate` prints.
#[pyfunction]
fn validate_config(toml: &str) -> PyResult<Vec<String>> {
    let mut cfg = ExperimentConfig::from_toml(toml).map_err(py_err)?;
    cfg.resolve();
    cfg.validate().map_err(py_err)
}

/// Run a TOML config, writing artifacts to `out_dir`; returns `report.json`
/// as a string.
#[pyfunction]
#[pyo3(signature = (toml, out_dir, threads=None))]
fn run_config(py: Python<'_>, toml: &str, out_dir: PathBuf, threads: Option<usize>) -> PyResult<String> {
    let cfg = ExperimentConfig::from_toml(toml).map_err(py_err)?;
    let report = py
        .detach(|| atlaslab::runner::run(&cfg, &out_dir, threads))
        .map_err(py_err)?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn pyatlaslab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(pi_a_rates, m)?)?;
    m.add_function(wrap_pyfunction!(a_min, m)?)?;
    m.add_function(wrap_pyfunction!(psi_eps, m)?)?;
    m.add_function(wrap_pyfunction!(kakutani_products, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
