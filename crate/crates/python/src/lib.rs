//! Python bindings. Rust errors surface as `ValueError` (bad input or
//! configuration), `OSError` (files), or `ArithmeticError` (training blew up).

use std::fs::File;
use std::io::BufWriter;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

use ttnet::cnn::{didactic_forward, didactic_gradients, didactic_sgd_step, DidacticCnnParams};
use ttnet::grid::{window_samples, TimeSpaceMatrix, WindowSpec};
use ttnet::harness::{self, compare_methods, train_on_split, ExperimentConfig, Method};
use ttnet::io::{format_instant, parse_instant, read_matrix, write_matrix};
use ttnet::model::SavedModel;
use ttnet::synth::{generate_scenario, ScenarioConfig};
use ttnet::{traffic, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        Error::Divergence { .. } => PyArithmeticError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn experiment(config: Option<&str>) -> PyResult<ExperimentConfig> {
    config.map_or_else(|| Ok(ExperimentConfig::default()), |s| ExperimentConfig::from_json(s).map_err(py_err))
}

/// Flow in vehicles per hour from a count over `interval_min` minutes.
#[pyfunction]
fn compute_flow(count: u64, interval_min: u32) -> PyResult<f64> {
    traffic::compute_flow(count, interval_min).map_err(py_err)
}

/// Density in vehicles per km from flow and time-mean speed.
#[pyfunction]
fn estimate_density(flow: f64, speed: f64) -> PyResult<f64> {
    traffic::estimate_density(flow, speed).map_err(py_err)
}

/// Travel time in hours over `length_km` at `speed` km/h.
#[pyfunction]
fn estimate_travel_time(length_km: f64, speed: f64) -> PyResult<f64> {
    traffic::estimate_travel_time(length_km, speed).map_err(py_err)
}

#[pyfunction]
fn relative_error(actual: f64, predicted: f64) -> PyResult<f64> {
    harness::relative_error(actual, predicted).map_err(py_err)
}

/// Mean absolute percentage error over paired values.
#[pyfunction]
fn mape(actual: Vec<f64>, predicted: Vec<f64>) -> PyResult<f64> {
    if actual.len() != predicted.len() {
        return Err(PyValueError::new_err("actual and predicted differ in length"));
    }
    let pairs: Vec<(f64, f64)> = actual.into_iter().zip(predicted).collect();
    harness::mape(&pairs).map_err(py_err)
}

/// Segments × intervals travel times in hours; unobserved cells are `None`.
#[pyclass(name = "Matrix", module = "ttnet")]
struct PyMatrix {
    inner: TimeSpaceMatrix,
}

#[pymethods]
impl PyMatrix {
    #[staticmethod]
    fn read_csv(path: &str) -> PyResult<Self> {
        let file = File::open(path).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
        Ok(Self { inner: read_matrix(file).map_err(py_err)? })
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        let file = File::create(path).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
        write_matrix(BufWriter::new(file), &self.inner).map_err(py_err)
    }

    #[getter]
    fn segment_ids(&self) -> Vec<String> {
        self.inner.segment_ids().to_vec()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.n_segments(), self.inner.n_intervals())
    }

    fn get(&self, segment: usize, interval: usize) -> Option<f64> {
        self.inner.get(segment, interval)
    }

    /// ISO-8601 start of interval `j`.
    fn interval_start(&self, j: usize) -> String {
        format_instant(self.inner.timeline().interval_start(j))
    }

    fn to_rows(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.inner.n_segments()).map(|i| self.inner.row(i).collect()).collect()
    }

    /// Supervised `(window, target)` pairs, windows flattened row-major.
    #[pyo3(signature = (rows = 3, lookback = 2, target = 0))]
    fn windows(&self, rows: usize, lookback: usize, target: usize) -> PyResult<Vec<(Vec<f64>, f64)>> {
        let samples = window_samples(&self.inner, &WindowSpec::new(rows, lookback, target)).map_err(py_err)?;
        Ok(samples.into_iter().map(|s| (s.window, s.target)).collect())
    }

    fn __repr__(&self) -> String {
        format!("Matrix({} segments × {} intervals)", self.inner.n_segments(), self.inner.n_intervals())
    }
}

/// Synthetic corridor scenario.
#[pyclass(name = "Scenario", module = "ttnet")]
struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    /// Three free-flowing segments.
    #[staticmethod]
    #[pyo3(signature = (days, seed = 0))]
    fn corridor(days: usize, seed: u64) -> Self {
        Self { inner: ScenarioConfig::corridor(days, seed) }
    }

    /// The corridor with random upstream-moving congestion.
    #[staticmethod]
    #[pyo3(signature = (days, seed = 0))]
    fn congested_corridor(days: usize, seed: u64) -> Self {
        Self { inner: ScenarioConfig::congested_corridor(days, seed) }
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        let inner: ScenarioConfig = serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Ground-truth travel-time matrix.
    fn generate(&self) -> PyResult<PyMatrix> {
        Ok(PyMatrix { inner: generate_scenario(&self.inner).map_err(py_err)? })
    }
}

/// Parameters of the 3×3 convolutional predictor, flat layout
/// `[w11..w14, b11..b14, w21..w24, b21]`.
#[pyclass(name = "DidacticCnn", module = "ttnet")]
struct PyDidacticCnn {
    inner: DidacticCnnParams,
}

#[pymethods]
impl PyDidacticCnn {
    #[new]
    #[pyo3(signature = (params, learning_rate = 0.05))]
    fn new(params: Vec<f64>, learning_rate: f64) -> PyResult<Self> {
        if params.len() != DidacticCnnParams::PARAMETER_COUNT {
            return Err(PyValueError::new_err(format!(
                "expected {} parameters, got {}",
                DidacticCnnParams::PARAMETER_COUNT,
                params.len()
            )));
        }
        let inner = DidacticCnnParams::from_vec(&params, learning_rate);
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (seed, learning_rate = 0.05))]
    fn random(seed: u64, learning_rate: f64) -> Self {
        Self { inner: DidacticCnnParams::random(seed, learning_rate) }
    }

    fn params(&self) -> Vec<f64> {
        self.inner.to_vec()
    }

    fn forward(&self, window: Vec<f64>) -> PyResult<f64> {
        Ok(didactic_forward(&window, &self.inner).map_err(py_err)?.prediction)
    }

    /// Partials of the squared error in the flat layout.
    fn gradients(&self, window: Vec<f64>, target: f64) -> PyResult<Vec<f64>> {
        Ok(didactic_gradients(&window, target, &self.inner).map_err(py_err)?.to_vec())
    }

    /// One gradient step on a single sample.
    fn step(&self, window: Vec<f64>, target: f64) -> PyResult<Self> {
        Ok(Self { inner: didactic_sgd_step(&window, target, &self.inner).map_err(py_err)? })
    }
}

/// A fitted predictor working on raw travel times in hours.
#[pyclass(name = "Model", module = "ttnet")]
struct PyModel {
    inner: SavedModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: SavedModel::load(path).map_err(py_err)? })
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(Self { inner: SavedModel::from_json(s).map_err(py_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[getter]
    fn model_type(&self) -> &'static str {
        self.inner.predictor.model_type()
    }

    fn predict(&self, window: Vec<f64>) -> PyResult<f64> {
        self.inner.predict(&window).map_err(py_err)
    }
}

fn parse_split(split: &str) -> PyResult<i64> {
    parse_instant(split).map_err(py_err)
}

/// Fits `method` on targets before `split` (ISO-8601 date or timestamp).
/// `config` is experiment JSON as accepted by the command line.
#[pyfunction]
#[pyo3(signature = (matrix, method, split, config = None))]
fn train(matrix: &PyMatrix, method: &str, split: &str, config: Option<&str>) -> PyResult<PyModel> {
    let method: Method = method.parse().map_err(py_err)?;
    let (inner, _) = train_on_split(&matrix.inner, method, &experiment(config)?, parse_split(split)?).map_err(py_err)?;
    Ok(PyModel { inner })
}

/// Runs several methods on one split. Returns `(table, report_json)`.
#[pyfunction]
#[pyo3(signature = (matrix, methods, split, config = None))]
fn evaluate(matrix: &PyMatrix, methods: Vec<String>, split: &str, config: Option<&str>) -> PyResult<(String, String)> {
    let methods = methods.iter().map(|m| m.parse()).collect::<ttnet::Result<Vec<Method>>>().map_err(py_err)?;
    let cmp = compare_methods(&matrix.inner, &methods, &experiment(config)?, parse_split(split)?).map_err(py_err)?;
    Ok((cmp.table(), cmp.to_json().map_err(py_err)?))
}

#[pymodule]
#[pyo3(name = "ttnet")]
fn ttnet_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(compute_flow, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_density, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_travel_time, m)?)?;
    m.add_function(wrap_pyfunction!(relative_error, m)?)?;
    m.add_function(wrap_pyfunction!(mape, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_class::<PyMatrix>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyDidacticCnn>()?;
    m.add_class::<PyModel>()?;
    m.add("METHODS", Method::ALL.iter().map(|m| m.name()).collect::<Vec<_>>())?;
    Ok(())
}
