//! Python bindings. Reports come back as plain dicts and lists.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use platoon_core::metrics::{min_achievable_tg, TimeGapSearch};
use platoon_core::model::{ControlGains, ModelKind, PlatoonScenario, PowertrainParams};
use platoon_core::stability::{self, FrequencyGrid, GapErrorParams};
use platoon_core::tuner::{ga_optimize, GAConfig, TuningReport};
use platoon_core::{Error, SimulationTrace};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Serializes through JSON into native Python objects.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_model(model: &str) -> PyResult<ModelKind> {
    model.parse().map_err(PyValueError::new_err)
}

#[pyclass(name = "ControlGains", from_py_object)]
#[derive(Clone)]
struct PyGains {
    inner: ControlGains,
}

#[pymethods]
impl PyGains {
    #[staticmethod]
    fn asymmetric(kd: f64, kv: f64, kc: f64) -> Self {
        Self { inner: ControlGains::asymmetric(kd, kv, kc) }
    }

    #[staticmethod]
    fn symmetric(kd: f64, kv: f64, kc: f64) -> Self {
        Self { inner: ControlGains::symmetric(kd, kv, kc) }
    }

    #[staticmethod]
    #[pyo3(signature = (model = "asym"))]
    fn reference(model: &str) -> PyResult<Self> {
        Ok(Self { inner: ControlGains::reference(parse_model(model)?) })
    }

    #[getter]
    fn kd1(&self) -> f64 {
        self.inner.kd1
    }

    #[getter]
    fn kd2(&self) -> f64 {
        self.inner.kd2
    }

    #[getter]
    fn kv(&self) -> f64 {
        self.inner.kv
    }

    #[getter]
    fn kc(&self) -> f64 {
        self.inner.kc
    }

    #[getter]
    fn model(&self) -> &'static str {
        self.inner.model_kind.as_str()
    }

    fn __repr__(&self) -> String {
        let g = &self.inner;
        format!("ControlGains(k_d1={}, k_d2={}, k_v={}, k_c={}, model='{}')", g.kd1, g.kd2, g.kv, g.kc, self.model())
    }
}

#[pyclass(name = "Scenario", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: PlatoonScenario,
}

#[pymethods]
impl PyScenario {
    /// Reference schedule with five followers.
    #[staticmethod]
    #[pyo3(signature = (model = "asym", te = 0.1, delta = 0.1, tg = 0.8))]
    fn reference(model: &str, te: f64, delta: f64, tg: f64) -> PyResult<Self> {
        let inner = PlatoonScenario::reference(parse_model(model)?, PowertrainParams::new(te, delta), tg);
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = platoon_core::io::load_scenario(path.as_ref()).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = platoon_core::io::parse_scenario(text).map_err(err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration
    }

    #[setter]
    fn set_duration(&mut self, v: f64) {
        self.inner.duration = v;
    }

    #[getter]
    fn record_stride(&self) -> usize {
        self.inner.record_stride
    }

    #[setter]
    fn set_record_stride(&mut self, v: usize) {
        self.inner.record_stride = v;
    }

    #[getter]
    fn desired_time_gap(&self) -> f64 {
        self.inner.policy.desired_time_gap
    }

    #[setter]
    fn set_desired_time_gap(&mut self, v: f64) {
        self.inner.policy.desired_time_gap = v;
    }

    #[getter]
    fn gains(&self) -> PyGains {
        PyGains { inner: self.inner.gains }
    }

    #[setter]
    fn set_gains(&mut self, g: PyGains) {
        self.inner.gains = g.inner;
    }

    /// Field-level problems; empty when the scenario is valid.
    fn violations(&self) -> Vec<String> {
        self.inner.violations().iter().map(|v| v.to_string()).collect()
    }
}

#[pyclass(name = "Trace")]
struct PyTrace {
    inner: SimulationTrace,
}

#[pymethods]
impl PyTrace {
    #[getter]
    fn status(&self) -> String {
        format!("{:?}", self.inner.status).to_lowercase()
    }

    #[getter]
    fn end_time(&self) -> f64 {
        self.inner.end_time
    }

    #[getter]
    fn time(&self) -> Vec<f64> {
        self.inner.time.clone()
    }

    /// Speeds per truck, leader first.
    #[getter]
    fn speed(&self) -> Vec<Vec<f64>> {
        self.inner.speed.clone()
    }

    #[getter]
    fn position(&self) -> Vec<Vec<f64>> {
        self.inner.position.clone()
    }

    #[getter]
    fn sste(&self) -> Vec<f64> {
        self.inner.sste.clone()
    }

    #[getter]
    fn ssse(&self) -> Vec<f64> {
        self.inner.ssse.clone()
    }

    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.metrics)
    }

    fn time_gaps(&self, k: usize) -> PyResult<Vec<f64>> {
        if k >= self.inner.len() {
            return Err(PyValueError::new_err(format!("record {k} out of range")));
        }
        Ok(self.inner.time_gaps(k))
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        platoon_core::io::write_trace_csv(path.as_ref(), &self.inner).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyfunction]
fn simulate(scenario: &PyScenario) -> PyResult<PyTrace> {
    let inner = platoon_core::run_platoon(&scenario.inner).map_err(err)?;
    Ok(PyTrace { inner })
}

#[pyfunction]
fn local_conditions<'py>(py: Python<'py>, gains: &PyGains, te: f64, tg: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &stability::local_conditions(&gains.inner, te, tg))
}

/// Returns `(|G|, X, Y)` at one frequency.
#[pyfunction]
fn gap_error_gain(kd: f64, kv: f64, te: f64, delta: f64, tg: f64, omega: f64) -> (f64, f64, f64) {
    let p = GapErrorParams { kd, kv, lag: te, delay: delta, desired_time_gap: tg };
    let g = stability::gap_error_gain(&p, omega);
    (g.magnitude, g.x, g.y)
}

#[pyfunction]
#[pyo3(signature = (gains, te, delta, tg, points = 2000, omega_min = 1e-3, omega_max = 1e3))]
fn string_stability<'py>(
    py: Python<'py>,
    gains: &PyGains,
    te: f64,
    delta: f64,
    tg: f64,
    points: usize,
    omega_min: f64,
    omega_max: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let grid = FrequencyGrid { min: omega_min, max: omega_max, points };
    if !grid.is_valid() {
        return Err(PyValueError::new_err("invalid frequency grid"));
    }
    let p = GapErrorParams::from_gains(&gains.inner, &PowertrainParams::new(te, delta), tg);
    to_py(py, &stability::string_stability_check(&p, &grid))
}

/// Smallest maintained time gap on `grid` (default 0.5 to 3.0 s), or None.
#[pyfunction]
#[pyo3(signature = (scenario, grid = None))]
fn min_time_gap<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    grid: Option<Vec<f64>>,
) -> PyResult<(Option<f64>, Bound<'py, PyAny>)> {
    let mut search = TimeGapSearch::default();
    if let Some(g) = grid {
        search.grid = g;
    }
    let r = min_achievable_tg(&scenario.inner, &search).map_err(err)?;
    Ok((r.min_time_gap, to_py(py, &r.trials)?))
}

#[pyfunction]
#[pyo3(signature = (model = "asym", te = 0.1, delta = 0.1, population = 50, generations = 100, seed = 2024))]
fn tune<'py>(
    py: Python<'py>,
    model: &str,
    te: f64,
    delta: f64,
    population: usize,
    generations: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let kind = parse_model(model)?;
    let cfg = GAConfig { population_size: population, generations, seed, ..GAConfig::default() };
    let pt = PowertrainParams::new(te, delta);
    let outcome = py.detach(|| ga_optimize(&cfg, kind, pt)).map_err(err)?;
    to_py(py, &TuningReport::new(&cfg, kind, pt, outcome))
}

#[pymodule]
fn platoon_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGains>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(local_conditions, m)?)?;
    m.add_function(wrap_pyfunction!(gap_error_gain, m)?)?;
    m.add_function(wrap_pyfunction!(string_stability, m)?)?;
    m.add_function(wrap_pyfunction!(min_time_gap, m)?)?;
    m.add_function(wrap_pyfunction!(tune, m)?)?;
    Ok(())
}
