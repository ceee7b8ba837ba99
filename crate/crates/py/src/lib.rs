//! Python bindings for `chemotaxis-core`. Structured results (reports,
//! resolved configs, fits) are returned as JSON strings.

use std::path::PathBuf;

use chemotaxis_core::analysis::{self, FitKind, NormSeries, SeriesLabel};
use chemotaxis_core::kernels;
use chemotaxis_core::model::{sk_check, SystemMatrices};
use chemotaxis_core::scenario;
use chemotaxis_core::solver;
use chemotaxis_core::{Error, Grid, ModelParams, NormKind};
use num_complex::Complex64;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::BlowUp { .. } => PyArithmeticError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn json<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn norm_kind(name: &str) -> PyResult<NormKind> {
    match name {
        "L1" => Ok(NormKind::L1),
        "L2" => Ok(NormKind::L2),
        "Linf" => Ok(NormKind::Linf),
        _ => Err(PyValueError::new_err(format!("unknown norm `{name}`"))),
    }
}

#[pyclass(name = "Grid", frozen)]
struct PyGrid(Grid);

#[pymethods]
impl PyGrid {
    #[new]
    fn new(dim: usize, points: usize, length: f64) -> PyResult<Self> {
        Grid::new(dim, points, length).map(PyGrid).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn points(&self) -> usize {
        self.0.points()
    }

    #[getter]
    fn length(&self) -> f64 {
        self.0.length()
    }

    #[getter]
    fn spacing(&self) -> f64 {
        self.0.spacing()
    }

    fn wavenumbers(&self) -> Vec<f64> {
        self.0.wavenumbers()
    }

    /// Real FFT round trip of a flattened field, for checking layouts.
    fn roundtrip(&self, values: Vec<f64>) -> PyResult<Vec<f64>> {
        if values.len() != self.0.len() {
            return Err(PyValueError::new_err("length does not match the grid"));
        }
        let spectral = chemotaxis_core::Spectral::new(self.0);
        Ok(spectral.inverse(&spectral.forward(&values)))
    }

    fn __repr__(&self) -> String {
        format!("Grid(dim={}, points={}, length={})", self.0.dim(), self.0.points(), self.0.length())
    }
}

#[pyclass(name = "ModelParams", frozen)]
struct PyModelParams(ModelParams);

#[pymethods]
impl PyModelParams {
    #[new]
    #[pyo3(signature = (gamma=1.0, beta=1.0, a=1.0, b=1.0))]
    fn new(gamma: f64, beta: f64, a: f64, b: f64) -> PyResult<Self> {
        ModelParams::new(gamma, beta, a, b).map(PyModelParams).map_err(to_py)
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.0.gamma
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta
    }

    #[getter]
    fn a(&self) -> f64 {
        self.0.a
    }

    #[getter]
    fn b(&self) -> f64 {
        self.0.b
    }

    fn effective_diffusion(&self) -> f64 {
        self.0.effective_diffusion()
    }

    fn branch_radius(&self) -> f64 {
        self.0.branch_radius()
    }

    /// Closed-form hyperbolic propagator at one wavevector, row-major.
    fn propagator(&self, xi: Vec<f64>, t: f64) -> Vec<Vec<Complex64>> {
        let m = kernels::propagator_matrix(&xi, &self.0, t);
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
    }

    /// Gap between the closed form and the matrix exponential.
    fn propagator_gap(&self, xi: Vec<f64>, t: f64) -> PyResult<f64> {
        kernels::propagator_gap(&xi, &self.0, t).map_err(to_py)
    }

    /// Stability condition over the sampled directions.
    fn sk_holds(&self, dim: usize, directions: Vec<Vec<f64>>) -> PyResult<bool> {
        let m = SystemMatrices::build(&self.0, dim).map_err(to_py)?;
        Ok(sk_check(&m, &directions).map_err(to_py)?.holds)
    }

    fn __repr__(&self) -> String {
        format!("ModelParams(gamma={}, beta={}, a={}, b={})", self.0.gamma, self.0.beta, self.0.a, self.0.b)
    }
}

#[pyfunction]
fn damped_wave_eigen(xi_norm: f64, gamma: f64, beta: f64) -> (Complex64, Complex64) {
    kernels::damped_wave_eigen(xi_norm, gamma, beta)
}

/// Returns `{quantity: rate}` with `quantity ~ t^{-rate}`.
#[pyfunction]
#[pyo3(signature = (dim, max_order=2))]
fn expected_rates(dim: usize, max_order: usize) -> Vec<(String, f64)> {
    analysis::expected_table(dim, max_order).entries.into_iter().map(|e| (e.quantity, e.rate)).collect()
}

#[pyfunction]
#[pyo3(signature = (times, values, window, kind="power", norm="L2"))]
fn fit_decay(times: Vec<f64>, values: Vec<f64>, window: (f64, f64), kind: &str, norm: &str) -> PyResult<String> {
    let kind = match kind {
        "power" => FitKind::Power,
        "exp" => FitKind::Exp,
        _ => return Err(PyValueError::new_err(format!("unknown fit kind `{kind}`"))),
    };
    let series = NormSeries::new(SeriesLabel::new("series", norm_kind(norm)?), times, values).map_err(to_py)?;
    json(&analysis::fit_decay(&series, window, kind).map_err(to_py)?)
}

#[pyfunction]
fn convolution_bound_check(gamma: f64, delta: f64, t_grid: Vec<f64>) -> PyResult<String> {
    json(&analysis::convolution_bound_check(gamma, delta, &t_grid).map_err(to_py)?)
}

/// Resolves a TOML scenario and returns it as JSON.
#[pyfunction]
fn parse_config(text: &str) -> PyResult<String> {
    json(&scenario::parse_config(text).map_err(to_py)?)
}

/// Runs a TOML scenario. Returns `(report_json, exit_code)`.
#[pyfunction]
#[pyo3(signature = (text, output_dir=None, seed=None, snapshots=false))]
fn run_scenario(
    py: Python<'_>,
    text: &str,
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
    snapshots: bool,
) -> PyResult<(String, i32)> {
    let mut config = scenario::parse_config(text).map_err(to_py)?;
    if let Some(dir) = output_dir {
        config.output_dir = dir;
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let (summary, status) = py.detach(|| scenario::execute(&config, snapshots)).map_err(to_py)?;
    Ok((json(&summary)?, status.exit_code()))
}

/// Integrates the solver part of a scenario and returns the recorded
/// columns, `t` included.
#[pyfunction]
#[pyo3(signature = (text, pks=false))]
fn simulate(py: Python<'_>, text: &str, pks: bool) -> PyResult<Vec<(String, Vec<f64>)>> {
    let config = scenario::parse_config(text).map_err(to_py)?;
    let traj = py
        .detach(|| if pks { solver::run_pks(&config.solver) } else { solver::run(&config.solver) })
        .map_err(to_py)?;
    let mut out = vec![("t".to_string(), traj.times.clone())];
    out.extend(traj.columns.into_iter().map(|c| (c.name, c.values)));
    Ok(out)
}

#[pymodule]
fn chemotaxis(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyModelParams>()?;
    m.add_function(wrap_pyfunction!(damped_wave_eigen, m)?)?;
    m.add_function(wrap_pyfunction!(expected_rates, m)?)?;
    m.add_function(wrap_pyfunction!(fit_decay, m)?)?;
    m.add_function(wrap_pyfunction!(convolution_bound_check, m)?)?;
    m.add_function(wrap_pyfunction!(parse_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
