//! Python bindings. Configuration objects cross the boundary as plain dicts
//! with the same keys as the JSON config files; reports come back as dicts.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

use rtefade_core as core;

use core::config::AnalysisConfig;
use core::efficiency::{estimate_efficiency as core_estimate, estimate_noise};
use core::pipeline;
use core::telemetry::{compute_soc_in_band, parse_csv, TelemetryRecord};
use core::thevenin::{self, DutyProfile, FleetScenario, TheveninParams};

create_exception!(rtefade, RtefadeError, PyException);
create_exception!(rtefade, DegenerateError, RtefadeError);

fn to_py_err(e: core::Error) -> PyErr {
    if e.exit_code() == 3 {
        DegenerateError::new_err(e.to_string())
    } else {
        RtefadeError::new_err(e.to_string())
    }
}

fn from_py<T: DeserializeOwned + Default>(obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    let Some(obj) = obj else {
        return Ok(T::default());
    };
    let text: String = obj
        .py()
        .import("json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&text).map_err(|e| RtefadeError::new_err(format!("invalid config: {e}")))
}

fn required<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj
        .py()
        .import("json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&text).map_err(|e| RtefadeError::new_err(format!("invalid config: {e}")))
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = core::report::to_json_string(value).map_err(to_py_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn analysis_config(obj: Option<&Bound<'_, PyAny>>) -> PyResult<AnalysisConfig> {
    let config: AnalysisConfig = from_py(obj)?;
    config.validate().map_err(to_py_err)?;
    Ok(config)
}

/// One contiguous telemetry segment.
#[pyclass(name = "TelemetrySeries", module = "rtefade")]
pub struct PySeries {
    inner: core::TelemetrySeries,
}

#[pymethods]
impl PySeries {
    #[new]
    #[pyo3(signature = (timestamp, current, voltage, temperature, sampling_interval=1.0, nominal_capacity=100.0, initial_soc=0.5, segment_id="segment"))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        timestamp: Vec<f64>,
        current: Vec<f64>,
        voltage: Vec<f64>,
        temperature: Vec<f64>,
        sampling_interval: f64,
        nominal_capacity: f64,
        initial_soc: f64,
        segment_id: &str,
    ) -> PyResult<Self> {
        let n = timestamp.len();
        if current.len() != n || voltage.len() != n || temperature.len() != n {
            return Err(RtefadeError::new_err("columns differ in length"));
        }
        let records = (0..n)
            .map(|k| TelemetryRecord {
                timestamp: timestamp[k],
                current: current[k],
                voltage: voltage[k],
                temperature: temperature[k],
            })
            .collect();
        let inner = core::TelemetrySeries::new(segment_id, records, sampling_interval, nominal_capacity, initial_soc)
            .map_err(to_py_err)?;
        Ok(PySeries { inner })
    }

    #[getter]
    fn segment_id(&self) -> &str {
        &self.inner.segment_id
    }

    #[getter]
    fn nominal_capacity(&self) -> f64 {
        self.inner.nominal_capacity
    }

    #[getter]
    fn sampling_interval(&self) -> f64 {
        self.inner.sampling_interval
    }

    #[getter]
    fn timestamp(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.timestamp).collect()
    }

    #[getter]
    fn current(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.current).collect()
    }

    #[getter]
    fn voltage(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.voltage).collect()
    }

    #[getter]
    fn temperature(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.temperature).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("TelemetrySeries('{}', {} samples)", self.inner.segment_id, self.inner.len())
    }
}

#[pyclass(name = "RoundTrip", module = "rtefade", frozen)]
pub struct PyRoundTrip {
    inner: core::RoundTrip,
}

#[pymethods]
impl PyRoundTrip {
    #[getter]
    fn start_index(&self) -> usize {
        self.inner.start_index
    }

    #[getter]
    fn end_index(&self) -> usize {
        self.inner.end_index
    }

    #[getter]
    fn segment_id(&self) -> &str {
        &self.inner.parent_segment
    }

    fn __repr__(&self) -> String {
        format!("RoundTrip({}..={})", self.inner.start_index, self.inner.end_index)
    }
}

/// Fitted `eta = b1 c1 + b2 c2 + b3` plane.
#[pyclass(name = "RegressionModel", module = "rtefade", frozen)]
pub struct PyRegression {
    inner: core::RegressionModel,
}

#[pymethods]
impl PyRegression {
    #[getter]
    fn beta(&self) -> [f64; 3] {
        self.inner.beta
    }

    #[getter]
    fn beta_stderr(&self) -> [f64; 3] {
        self.inner.beta_stderr
    }

    #[getter]
    fn p_values(&self) -> [f64; 3] {
        self.inner.p_values
    }

    #[getter]
    fn adjusted_r2(&self) -> f64 {
        self.inner.adjusted_r2
    }

    #[getter]
    fn n_trips(&self) -> usize {
        self.inner.n_trips
    }

    #[getter]
    fn condition_names(&self) -> (String, String) {
        let [a, b] = self.inner.condition_names.clone();
        (a, b)
    }

    /// Returns `(eta_hat, stderr, extrapolated)`.
    fn predict(&self, c1: f64, c2: f64) -> (f64, f64, bool) {
        let p = self.inner.predict(c1, c2);
        (p.eta_hat, p.stderr, p.extrapolated)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }
}

/// Reads a telemetry CSV into gap-free segments.
#[pyfunction]
#[pyo3(signature = (path, config=None))]
fn read_csv(path: PathBuf, config: Option<&Bound<'_, PyAny>>) -> PyResult<Vec<PySeries>> {
    let config = analysis_config(config)?;
    let file = std::fs::File::open(&path).map_err(|e| to_py_err(e.into()))?;
    let prefix = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let parsed = parse_csv(std::io::BufReader::new(file), &config.ingest, &prefix).map_err(to_py_err)?;
    Ok(parsed.series.into_iter().map(|inner| PySeries { inner }).collect())
}

#[pyfunction]
fn compute_soc(series: &PySeries) -> Vec<f64> {
    core::compute_soc(&series.inner).soc
}

#[pyfunction]
#[pyo3(signature = (series, config=None))]
fn detect_round_trips(series: &PySeries, config: Option<&Bound<'_, PyAny>>) -> PyResult<Vec<PyRoundTrip>> {
    let config = analysis_config(config)?;
    let band = (config.ingest.soc_band[0], config.ingest.soc_band[1]);
    let soc = compute_soc_in_band(&series.inner, band);
    let detector = config.detector.resolve(series.inner.nominal_capacity);
    let trips = core::detect_round_trips(&series.inner, &soc, &detector).map_err(to_py_err)?;
    Ok(trips.into_iter().map(|inner| PyRoundTrip { inner }).collect())
}

/// Efficiency of one trip with its propagated standard error, as a dict.
#[pyfunction]
#[pyo3(signature = (series, trip, config=None))]
fn estimate_efficiency<'py>(
    py: Python<'py>,
    series: &PySeries,
    trip: &PyRoundTrip,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let config = analysis_config(config)?;
    let rest = config.detector.resolve(series.inner.nominal_capacity).rest_current_max;
    let noise = estimate_noise(&series.inner, &config.sensor, rest);
    let estimate = core_estimate(&series.inner, &trip.inner, &config.sensor, &noise).map_err(to_py_err)?;
    to_py(py, &estimate)
}

/// Spearman correlation; returns `(rho, p_value, significant)`.
#[pyfunction]
#[pyo3(signature = (x, y, alpha=0.05))]
fn spearman(x: Vec<f64>, y: Vec<f64>, alpha: f64) -> PyResult<(f64, f64, bool)> {
    let r = core::conditions::spearman(&x, &y, alpha).map_err(to_py_err)?;
    Ok((r.rho, r.p_value, r.significant))
}

#[pyfunction]
#[pyo3(signature = (c1, c2, eta, eta_stderr, names=("c1".to_string(), "c2".to_string())))]
fn fit_wls(
    c1: Vec<f64>,
    c2: Vec<f64>,
    eta: Vec<f64>,
    eta_stderr: Vec<f64>,
    names: (String, String),
) -> PyResult<PyRegression> {
    let n = c1.len();
    if c2.len() != n || eta.len() != n || eta_stderr.len() != n {
        return Err(RtefadeError::new_err("columns differ in length"));
    }
    let obs: Vec<core::WlsObservation> = (0..n)
        .map(|k| core::WlsObservation {
            c1: c1[k],
            c2: c2[k],
            eta: eta[k],
            eta_stderr: eta_stderr[k],
        })
        .collect();
    let inner = core::regression::fit_wls(&obs, [&names.0, &names.1], "all").map_err(to_py_err)?;
    Ok(PyRegression { inner })
}

/// Simulates a Thevenin battery; `params` and `profile` are dicts.
#[pyfunction]
#[pyo3(signature = (params, profile, seed=0))]
fn simulate(params: &Bound<'_, PyAny>, profile: &Bound<'_, PyAny>, seed: u64) -> PyResult<PySeries> {
    let params: TheveninParams = required(params)?;
    let profile: DutyProfile = required(profile)?;
    let inner = thevenin::simulate(&params, &profile, seed).map_err(to_py_err)?;
    Ok(PySeries { inner })
}

/// Returns `(exact, linearized)` efficiency for a constant-current cycle.
#[pyfunction]
fn analytic_eta(u_emf: f64, r0: f64, i_c: f64) -> PyResult<(f64, f64)> {
    let a = thevenin::analytic_eta(u_emf, r0, i_c).map_err(to_py_err)?;
    Ok((a.exact, a.linearized))
}

fn files(paths: Vec<PathBuf>) -> PyResult<Vec<PathBuf>> {
    pipeline::collect_inputs(&paths).map_err(to_py_err)
}

#[pyfunction]
#[pyo3(signature = (paths, config=None, out=None))]
fn detect<'py>(
    py: Python<'py>,
    paths: Vec<PathBuf>,
    config: Option<&Bound<'py, PyAny>>,
    out: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let config = analysis_config(config)?;
    let outcome = pipeline::run_detect(&files(paths)?, &config).map_err(to_py_err)?;
    if let Some(out) = out {
        pipeline::write_detect(&out, &outcome).map_err(to_py_err)?;
    }
    let dict = PyDict::new(py);
    dict.set_item("trips", to_py(py, &outcome.audits)?)?;
    dict.set_item("summary", to_py(py, &outcome.summary)?)?;
    Ok(dict.into_any())
}

#[pyfunction]
#[pyo3(signature = (paths, config=None, out=None))]
fn analyze<'py>(
    py: Python<'py>,
    paths: Vec<PathBuf>,
    config: Option<&Bound<'py, PyAny>>,
    out: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let config = analysis_config(config)?;
    let outcome = pipeline::run_analyze(&files(paths)?, &config).map_err(to_py_err)?;
    if let Some(out) = out {
        pipeline::write_analyze(&out, &outcome).map_err(to_py_err)?;
    }
    let dict = PyDict::new(py);
    dict.set_item("trips", to_py(py, &outcome.trips)?)?;
    dict.set_item("correlation", to_py(py, &outcome.correlation)?)?;
    dict.set_item("regression", to_py(py, &outcome.regression)?)?;
    dict.set_item("summary", to_py(py, &outcome.summary)?)?;
    Ok(dict.into_any())
}

#[pyfunction]
#[pyo3(signature = (paths, config=None, out=None))]
fn fade<'py>(
    py: Python<'py>,
    paths: Vec<PathBuf>,
    config: Option<&Bound<'py, PyAny>>,
    out: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let config = analysis_config(config)?;
    let outcome = pipeline::run_fade(&files(paths)?, &config).map_err(to_py_err)?;
    if let Some(out) = out {
        pipeline::write_fade(&out, &outcome).map_err(to_py_err)?;
    }
    to_py(py, &outcome.report)
}

/// Writes one CSV per scenario partition; returns the paths.
#[pyfunction]
#[pyo3(signature = (scenario, out, seed=0))]
fn simulate_fleet(scenario: &Bound<'_, PyAny>, out: PathBuf, seed: u64) -> PyResult<Vec<PathBuf>> {
    let scenario: FleetScenario = required(scenario)?;
    pipeline::run_simulate(&scenario, seed, &out).map_err(to_py_err)
}

#[pymodule]
fn rtefade(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RtefadeError", m.py().get_type::<RtefadeError>())?;
    m.add("DegenerateError", m.py().get_type::<DegenerateError>())?;
    m.add_class::<PySeries>()?;
    m.add_class::<PyRoundTrip>()?;
    m.add_class::<PyRegression>()?;
    m.add_function(wrap_pyfunction!(read_csv, m)?)?;
    m.add_function(wrap_pyfunction!(compute_soc, m)?)?;
    m.add_function(wrap_pyfunction!(detect_round_trips, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_efficiency, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(fit_wls, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_eta, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(fade, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_fleet, m)?)?;
    Ok(())
}
